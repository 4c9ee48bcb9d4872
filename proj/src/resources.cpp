#include "pir/resources.hpp"

namespace pir::resources {

std::string render(std::string_view tmpl,
                   std::initializer_list<std::pair<std::string_view, std::string_view>> vars) {
  // Drop the "# <name>-v<N>" version line.
  if (tmpl.starts_with("# ")) {
    const auto nl = tmpl.find('\n');
    tmpl.remove_prefix(nl == std::string_view::npos ? tmpl.size() : nl + 1);
  }
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) break;
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    const auto name = tmpl.substr(open + 2, close - open - 2);
    out.append(tmpl.substr(pos, open - pos));
    bool found = false;
    for (const auto& [key, value] : vars) {
      if (key == name) {
        out.append(value);
        found = true;
        break;
      }
    }
    if (!found) out.append(tmpl.substr(open, close + 2 - open));
    pos = close + 2;
  }
  out.append(tmpl.substr(pos));
  // Trailing newline of the resource file is not part of the message.
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

}  // namespace pir::resources
