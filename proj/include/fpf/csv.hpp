#pragma once

#include <string>

namespace fpf {

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

}  // namespace fpf
