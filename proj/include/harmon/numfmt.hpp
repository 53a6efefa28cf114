#pragma once

#include <cstdio>
#include <string>

namespace harmon {

// 17 significant digits: enough for exact double round-trips through text.
inline std::string format_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace harmon
