#pragma once

#include <string_view>

namespace tubenerf {

std::string_view version();
std::string_view git_revision();

}  // namespace tubenerf
