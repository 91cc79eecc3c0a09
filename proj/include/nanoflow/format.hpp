#pragma once

#include <charconv>
#include <string>
#include <system_error>

namespace nanoflow {

/// Shortest representation that round-trips; locale independent.
inline std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{})
        return "nan";
    return std::string(buf, end);
}

} // namespace nanoflow
