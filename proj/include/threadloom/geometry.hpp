#pragma once

#include <algorithm>
#include <cstddef>

namespace threadloom {

// Axis-aligned rectangle, origin top-left, y grows downward.
struct Rect {
    double x = 0;
    double y = 0;
    double width = 0;
    double height = 0;

    double right() const { return x + width; }
    double bottom() const { return y + height; }
    double area() const { return width * height; }
    bool valid() const { return width > 0 && height > 0; }

    friend bool operator==(const Rect&, const Rect&) = default;
};

struct PageRect {
    std::size_t page = 0;
    Rect rect;

    friend bool operator==(const PageRect&, const PageRect&) = default;
};

inline double intersection_area(const Rect& a, const Rect& b) {
    const double w = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double h = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    if (w <= 0 || h <= 0) return 0;
    return w * h;
}

// True when the overlap covers at least `ratio` of the smaller rectangle.
inline bool overlaps_enough(const Rect& a, const Rect& b, double ratio) {
    const double inter = intersection_area(a, b);
    if (inter <= 0) return false;
    return inter >= ratio * std::min(a.area(), b.area());
}

}  // namespace threadloom
