#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace layerscope {

/// Dense row-major raster. Pixel (x, y) is column x of row y.
template <typename T>
class Image {
public:
    using value_type = T;

    Image() = default;
    Image(int width, int height, T fill = T{})
        : width_(width), height_(height), data_(static_cast<std::size_t>(checked(width, height)), fill) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    bool contains(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    T& operator()(int x, int y) noexcept { return data_[index(x, y)]; }
    const T& operator()(int x, int y) const noexcept { return data_[index(x, y)]; }

    std::span<T> row(int y) noexcept { return {data_.data() + index(0, y), static_cast<std::size_t>(width_)}; }
    std::span<const T> row(int y) const noexcept {
        return {data_.data() + index(0, y), static_cast<std::size_t>(width_)};
    }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool operator==(const Image&) const = default;

private:
    static long checked(int w, int h) {
        if (w < 0 || h < 0) throw std::invalid_argument("negative image size");
        return static_cast<long>(w) * h;
    }
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using GrayImage = Image<std::uint8_t>;
using RealImage = Image<double>;
/// Binary raster; nonzero means set.
using Mask = Image<std::uint8_t>;
using LabelImage = Image<int>;

struct PixelBox {
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive

    bool empty() const noexcept { return x1 < x0 || y1 < y0; }
    int width() const noexcept { return empty() ? 0 : x1 - x0 + 1; }
    int height() const noexcept { return empty() ? 0 : y1 - y0 + 1; }
    void extend(int x, int y) noexcept {
        if (empty()) {
            x0 = x1 = x;
            y0 = y1 = y;
            return;
        }
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
    }
};

inline std::uint8_t clamp_to_u8(double v) noexcept {
    if (!(v > 0.0)) return 0;
    if (v >= 255.0) return 255;
    return static_cast<std::uint8_t>(std::lround(v));
}

template <typename T>
RealImage to_real(const Image<T>& img) {
    RealImage out(img.width(), img.height());
    std::transform(img.data().begin(), img.data().end(), out.data().begin(),
                   [](T v) { return static_cast<double>(v); });
    return out;
}

inline GrayImage to_gray(const RealImage& img) {
    GrayImage out(img.width(), img.height());
    std::transform(img.data().begin(), img.data().end(), out.data().begin(), clamp_to_u8);
    return out;
}

/// Bilinear sample at continuous pixel coordinates; `outside` beyond the pixel-center hull.
template <typename T>
double sample_bilinear(const Image<T>& img, double x, double y, double outside = 0.0) noexcept {
    if (!(x >= 0.0) || !(y >= 0.0) || x > img.width() - 1 || y > img.height() - 1) return outside;
    const int x0 = std::min(static_cast<int>(x), img.width() - 1);
    const int y0 = std::min(static_cast<int>(y), img.height() - 1);
    const int x1 = std::min(x0 + 1, img.width() - 1);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = (1.0 - fx) * static_cast<double>(img(x0, y0)) + fx * static_cast<double>(img(x1, y0));
    const double bot = (1.0 - fx) * static_cast<double>(img(x0, y1)) + fx * static_cast<double>(img(x1, y1));
    return (1.0 - fy) * top + fy * bot;
}

/// Bilinear resampling with pixel-center alignment and clamped borders.
template <typename T>
RealImage resize_bilinear(const Image<T>& img, int width, int height) {
    if (img.empty()) throw std::invalid_argument("resize of empty image");
    RealImage out(width, height);
    const double sx = static_cast<double>(img.width()) / width;
    const double sy = static_cast<double>(img.height()) / height;
    for (int y = 0; y < height; ++y) {
        const double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
        for (int x = 0; x < width; ++x) {
            const double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
            out(x, y) = sample_bilinear(img, u, v);
        }
    }
    return out;
}

template <typename T>
Image<T> resize_nearest(const Image<T>& img, int width, int height) {
    Image<T> out(width, height);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(static_cast<int>((y + 0.5) * img.height() / height), img.height() - 1);
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(static_cast<int>((x + 0.5) * img.width() / width), img.width() - 1);
            out(x, y) = img(sx, sy);
        }
    }
    return out;
}

template <typename T>
Image<T> crop(const Image<T>& img, const PixelBox& box) {
    Image<T> out(box.width(), box.height());
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) out(x, y) = img(box.x0 + x, box.y0 + y);
    return out;
}

/// Mirror index into [0, n) without repeating the edge sample (d c b | a b c d | c b a).
inline int reflect_index(int i, int n) noexcept {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

inline std::vector<double> gaussian_kernel_1d(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;
    return k;
}

/// Separable convolution with reflect padding.
inline RealImage convolve_separable(const RealImage& img, std::span<const double> kx, std::span<const double> ky) {
    const int w = img.width(), h = img.height();
    const int rx = static_cast<int>(kx.size()) / 2, ry = static_cast<int>(ky.size()) / 2;
    RealImage tmp(w, h), out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -rx; i <= rx; ++i) acc += kx[i + rx] * img(reflect_index(x + i, w), y);
            tmp(x, y) = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -ry; i <= ry; ++i) acc += ky[i + ry] * tmp(x, reflect_index(y + i, h));
            out(x, y) = acc;
        }
    return out;
}

inline RealImage gaussian_blur(const RealImage& img, double sigma) {
    if (sigma <= 0.0) return img;
    const auto k = gaussian_kernel_1d(sigma);
    return convolve_separable(img, k, k);
}

namespace detail {

// Felzenszwalb-Huttenlocher lower envelope of parabolas, in place on f.
inline void edt_1d(std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int q = 1; q < n; ++q) {
        if (f[q] == inf) continue;
        if (f[v[k]] == inf) {
            v[k] = q;
            continue;
        }
        double s;
        while (true) {
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        d[q] = (f[v[k]] == inf) ? inf : (double(q) - v[k]) * (double(q) - v[k]) + f[v[k]];
    }
    f = d;
}

}  // namespace detail

/// Squared Euclidean distance from each pixel to the nearest set pixel of `features`.
inline RealImage squared_distance_transform(const Mask& features) {
    const int w = features.width(), h = features.height();
    constexpr double inf = std::numeric_limits<double>::infinity();
    RealImage dist(w, h, inf);
    for (std::size_t i = 0; i < features.size(); ++i)
        if (features.data()[i]) dist.data()[i] = 0.0;
    const int n = std::max(w, h);
    std::vector<double> f, d;
    std::vector<int> v(n + 1);
    std::vector<double> z(n + 2);
    f.resize(h);
    d.resize(h);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[y] = dist(x, y);
        detail::edt_1d(f, d, v, z);
        for (int y = 0; y < h; ++y) dist(x, y) = f[y];
    }
    f.resize(w);
    d.resize(w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f[x] = dist(x, y);
        detail::edt_1d(f, d, v, z);
        for (int x = 0; x < w; ++x) dist(x, y) = f[x];
    }
    return dist;
}

/// Disk dilation (Euclidean radius in pixels).
inline Mask dilate(const Mask& m, double radius) {
    const auto d = squared_distance_transform(m);
    Mask out(m.width(), m.height());
    const double r2 = radius * radius;
    for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = d.data()[i] <= r2 ? 1 : 0;
    return out;
}

inline Mask invert(const Mask& m) {
    Mask out(m.width(), m.height());
    for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = m.data()[i] ? 0 : 1;
    return out;
}

inline Mask erode(const Mask& m, double radius) { return invert(dilate(invert(m), radius)); }

inline Mask morph_close(const Mask& m, double radius) { return erode(dilate(m, radius), radius); }

inline std::size_t count_set(const Mask& m) {
    return static_cast<std::size_t>(std::count_if(m.data().begin(), m.data().end(), [](auto v) { return v != 0; }));
}

struct Components {
    LabelImage labels;  // 0 = background, 1..count
    int count = 0;
};

/// Connected components of set pixels, 8- or 4-connected, labelled in raster order of first pixel.
inline Components connected_components(const Mask& m, int connectivity = 8) {
    Components c{LabelImage(m.width(), m.height(), 0), 0};
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m(x, y) || c.labels(x, y)) continue;
            const int label = ++c.count;
            c.labels(x, y) = label;
            stack.emplace_back(x, y);
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dx && !dy) continue;
                        if (connectivity == 4 && dx && dy) continue;
                        const int nx = cx + dx, ny = cy + dy;
                        if (!m.contains(nx, ny) || !m(nx, ny) || c.labels(nx, ny)) continue;
                        c.labels(nx, ny) = label;
                        stack.emplace_back(nx, ny);
                    }
            }
        }
    return c;
}

/// Bresenham line, thickened to two pixels across the minor axis.
template <typename T>
void draw_line_2px(Image<T>& img, int x0, int y0, int x1, int y1, T value) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    const bool x_major = dx >= -dy;
    int err = dx + dy;
    while (true) {
        if (img.contains(x0, y0)) img(x0, y0) = value;
        const int tx = x_major ? x0 : x0 + 1, ty = x_major ? y0 + 1 : y0;
        if (img.contains(tx, ty)) img(tx, ty) = value;
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

/// Sets every pixel whose center lies within `half_width` of segment (ax,ay)-(bx,by).
template <typename T>
void stroke_segment(Image<T>& img, double ax, double ay, double bx, double by, double half_width, T value) {
    const int xmin = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - half_width)));
    const int xmax = std::min(img.width() - 1, static_cast<int>(std::ceil(std::max(ax, bx) + half_width)));
    const int ymin = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - half_width)));
    const int ymax = std::min(img.height() - 1, static_cast<int>(std::ceil(std::max(ay, by) + half_width)));
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    const double hw2 = half_width * half_width;
    for (int y = ymin; y <= ymax; ++y)
        for (int x = xmin; x <= xmax; ++x) {
            double t = len2 > 0 ? ((x - ax) * vx + (y - ay) * vy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double ex = ax + t * vx - x, ey = ay + t * vy - y;
            if (ex * ex + ey * ey <= hw2) img(x, y) = value;
        }
}

/// Even-odd scanline fill over pixel centers. `xs`/`ys` are polygon vertices in pixel units.
template <typename T>
void fill_polygon(Image<T>& img, std::span<const double> xs, std::span<const double> ys, T value) {
    const std::size_t n = xs.size();
    if (n < 3) return;
    std::vector<double> cross;
    for (int y = 0; y < img.height(); ++y) {
        cross.clear();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const double yi = ys[i], yj = ys[j];
            if ((yi > y) != (yj > y)) cross.push_back(xs[i] + (y - yi) * (xs[j] - xs[i]) / (yj - yi));
        }
        std::sort(cross.begin(), cross.end());
        for (std::size_t k = 0; k + 1 < cross.size(); k += 2) {
            const int xa = std::max(0, static_cast<int>(std::ceil(cross[k])));
            const int xb = std::min(img.width() - 1, static_cast<int>(std::floor(cross[k + 1])));
            for (int x = xa; x <= xb; ++x) img(x, y) = value;
        }
    }
}

}  // namespace layerscope
