#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>

namespace pir::resources {

// Contents of the files under resources/, embedded at build time.
std::string_view phrases_v1();
std::string_view segment_prompt_v1();
std::string_view classify_prompt_v1();

/// Replaces every "{{name}}" with its value.
std::string render(std::string_view tmpl,
                   std::initializer_list<std::pair<std::string_view, std::string_view>> vars);

}  // namespace pir::resources
