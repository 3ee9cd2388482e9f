#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lesionrisk {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Fixed-point text with `decimals` digits after the point.
std::string format_fixed(double v, int decimals);

/// Splits on `sep`, keeping empty pieces.
std::vector<std::string> split_list(std::string_view s, char sep = ',');

}  // namespace lesionrisk
