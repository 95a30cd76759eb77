#pragma once

// Leung-Malik style filter bank, per-pixel filter responses and the texture features the mixture
// model is fitted on.

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"
#include "image.hpp"

namespace layerscope {

enum class KernelFamily { FirstDeriv, SecondDeriv, DoG, Gaussian };

inline const char* to_string(KernelFamily f) noexcept {
    switch (f) {
        case KernelFamily::FirstDeriv: return "FirstDeriv";
        case KernelFamily::SecondDeriv: return "SecondDeriv";
        case KernelFamily::DoG: return "DoG";
        case KernelFamily::Gaussian: return "Gaussian";
    }
    return "?";
}

struct KernelInfo {
    KernelFamily family = KernelFamily::Gaussian;
    double orientation = 0.0;  // radians, elongated kernels only
    double scale = 1.0;        // sigma in pixels after size scaling
};

struct FilterBank {
    int size = 49;
    std::vector<RealImage> kernels;
    std::vector<KernelInfo> info;

    bool zero_dc(std::size_t i) const noexcept { return info[i].family != KernelFamily::Gaussian; }
};

namespace detail {

inline void normalize_kernel(RealImage& k, bool zero_mean) {
    auto& d = k.data();
    if (zero_mean) {
        double mean = 0.0;
        for (double v : d) mean += v;
        mean /= static_cast<double>(d.size());
        for (double& v : d) v -= mean;
    }
    double l1 = 0.0;
    for (double v : d) l1 += std::abs(v);
    for (double& v : d) v /= l1;
    if (zero_mean) {
        // remove the rounding left by the division
        double mean = 0.0;
        for (double v : d) mean += v;
        mean /= static_cast<double>(d.size());
        for (double& v : d) v -= mean;
    }
}

inline RealImage gaussian_2d(int size, double sigma) {
    RealImage k(size, size);
    const int r = size / 2;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) k(x + r, y + r) = std::exp(-0.5 * (x * x + y * y) / (sigma * sigma));
    return k;
}

/// Anisotropic Gaussian derivative: long axis sigma_u along `angle`, derivative across it.
inline RealImage oriented_derivative(int size, double sigma, double angle, int order) {
    RealImage k(size, size);
    const int r = size / 2;
    const double su = 3.0 * sigma, sv = sigma;
    const double c = std::cos(angle), s = std::sin(angle);
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            const double u = c * x + s * y;   // along the filter
            const double v = -s * x + c * y;  // across the filter
            const double g = std::exp(-0.5 * (u * u / (su * su) + v * v / (sv * sv)));
            const double dv = order == 1 ? -v / (sv * sv) : (v * v - sv * sv) / (sv * sv * sv * sv);
            k(x + r, y + r) = g * dv;
        }
    return k;
}

}  // namespace detail

/// 48 kernels: 36 elongated first/second derivatives (3 scales x 6 orientations each),
/// 8 difference-of-Gaussians and 4 Gaussians.
inline FilterBank build_lm_filterbank(int size = 49) {
    if (size < 7 || size % 2 == 0) throw BankError("filter size must be odd and at least 7, got " + std::to_string(size));
    const double f = size / 49.0;
    const double r2 = std::numbers::sqrt2;
    FilterBank bank;
    bank.size = size;
    for (int order = 1; order <= 2; ++order)
        for (double sigma : {1.0, r2, 2.0})
            for (int o = 0; o < 6; ++o) {
                const double angle = o * std::numbers::pi / 6.0;
                auto k = detail::oriented_derivative(size, sigma * f, angle, order);
                detail::normalize_kernel(k, true);
                bank.kernels.push_back(std::move(k));
                bank.info.push_back({order == 1 ? KernelFamily::FirstDeriv : KernelFamily::SecondDeriv, angle, sigma * f});
            }
    constexpr double dog_ratio = 1.6;
    for (double base : {1.0, 3.0})
        for (double sigma : {1.0, r2, 2.0, 2.0 * r2}) {
            const double sc = base * sigma * f;
            auto inner = detail::gaussian_2d(size, sc), outer = detail::gaussian_2d(size, dog_ratio * sc);
            double si = 0, so = 0;
            for (double v : inner.data()) si += v;
            for (double v : outer.data()) so += v;
            RealImage k(size, size);
            for (std::size_t i = 0; i < k.size(); ++i) k.data()[i] = inner.data()[i] / si - outer.data()[i] / so;
            detail::normalize_kernel(k, true);
            bank.kernels.push_back(std::move(k));
            bank.info.push_back({KernelFamily::DoG, 0.0, sc});
        }
    for (double sigma : {1.0, r2, 2.0, 2.0 * r2}) {
        auto k = detail::gaussian_2d(size, sigma * f);
        detail::normalize_kernel(k, false);
        bank.kernels.push_back(std::move(k));
        bank.info.push_back({KernelFamily::Gaussian, 0.0, sigma * f});
    }
    return bank;
}

/// Per-pixel vectors, pixel-major: channel c of pixel (x, y) is data[(y * width + x) * channels + c].
struct ResponseField {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    std::size_t pixels() const noexcept { return static_cast<std::size_t>(width) * height; }
    const double* at(int x, int y) const noexcept { return data.data() + (static_cast<std::size_t>(y) * width + x) * channels; }
    double* at(int x, int y) noexcept { return data.data() + (static_cast<std::size_t>(y) * width + x) * channels; }
};

/// Zero mean, unit variance; a constant image becomes all zeros.
inline RealImage standardize(const RealImage& img) {
    RealImage out = img;
    double mean = 0.0, var = 0.0;
    for (double v : img.data()) mean += v;
    mean /= static_cast<double>(img.size());
    for (double v : img.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(img.size());
    const double sd = std::sqrt(var);
    for (double& v : out.data()) v = sd > 1e-12 ? (v - mean) / sd : 0.0;
    return out;
}

/// Direct 2-D convolution with reflect padding.
inline RealImage convolve2d(const RealImage& img, const RealImage& k) {
    const int w = img.width(), h = img.height(), r = k.width() / 2;
    RealImage out(w, h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int j = -r; j <= r; ++j) {
                const int yy = reflect_index(y - j, h);
                for (int i = -r; i <= r; ++i) acc += k(i + r, j + r) * img(reflect_index(x - i, w), yy);
            }
            out(x, y) = acc;
        }
    return out;
}

namespace detail {

struct FftwFree {
    void operator()(void* p) const noexcept { fftw_free(p); }
};
struct PlanFree {
    void operator()(fftw_plan_s* p) const noexcept { fftw_destroy_plan(p); }
};
using FftwReal = std::unique_ptr<double[], FftwFree>;
using FftwComplex = std::unique_ptr<fftw_complex[], FftwFree>;
using Plan = std::unique_ptr<fftw_plan_s, PlanFree>;

}  // namespace detail

/// Responses of the standardized image to every kernel (reflect padding, true convolution).
inline ResponseField filter_responses(const RealImage& image, const FilterBank& bank) {
    const int w = image.width(), h = image.height(), r = bank.size / 2;
    if (w < bank.size || h < bank.size)
        throw SizeError("image " + std::to_string(w) + "x" + std::to_string(h) + " is smaller than the " +
                        std::to_string(bank.size) + " px filter bank");
    const RealImage img = standardize(image);
    const int lw = w + 2 * r, lh = h + 2 * r;
    const int cw = lw / 2 + 1;
    const std::size_t nreal = static_cast<std::size_t>(lw) * lh, ncplx = static_cast<std::size_t>(lh) * cw;

    detail::FftwReal real(fftw_alloc_real(nreal));
    detail::FftwComplex spec_img(fftw_alloc_complex(ncplx)), spec(fftw_alloc_complex(ncplx));
    detail::Plan fwd(fftw_plan_dft_r2c_2d(lh, lw, real.get(), spec.get(), FFTW_ESTIMATE));
    detail::Plan inv(fftw_plan_dft_c2r_2d(lh, lw, spec.get(), real.get(), FFTW_ESTIMATE));

    for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x) real[y * lw + x] = img(reflect_index(x - r, w), reflect_index(y - r, h));
    fftw_execute(fwd.get());
    std::memcpy(spec_img.get(), spec.get(), sizeof(fftw_complex) * ncplx);

    ResponseField field{w, h, static_cast<int>(bank.kernels.size()), {}};
    field.data.assign(field.pixels() * field.channels, 0.0);
    const double norm = 1.0 / static_cast<double>(nreal);
    for (std::size_t c = 0; c < bank.kernels.size(); ++c) {
        const RealImage& k = bank.kernels[c];
        std::fill(real.get(), real.get() + nreal, 0.0);
        for (int j = -r; j <= r; ++j)
            for (int i = -r; i <= r; ++i) real[((j + lh) % lh) * lw + (i + lw) % lw] = k(i + r, j + r);
        fftw_execute(fwd.get());
        for (std::size_t i = 0; i < ncplx; ++i) {
            const std::complex<double> a(spec_img[i][0], spec_img[i][1]), b(spec[i][0], spec[i][1]);
            const auto p = a * b;
            spec[i][0] = p.real();
            spec[i][1] = p.imag();
        }
        fftw_execute(inv.get());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) field.at(x, y)[c] = real[(y + r) * lw + (x + r)] * norm;
    }
    return field;
}

/// Local texture energy: rectified zero-DC responses and signed low-pass responses, each
/// smoothed with a Gaussian of `sigma` pixels.
inline ResponseField texture_features(const ResponseField& responses, const FilterBank& bank, double sigma = 2.0) {
    ResponseField out = responses;
    RealImage ch(responses.width, responses.height);
    const auto k = gaussian_kernel_1d(std::max(sigma, 1e-3));
    for (int c = 0; c < responses.channels; ++c) {
        const bool rectify = bank.zero_dc(static_cast<std::size_t>(c));
        for (int y = 0; y < responses.height; ++y)
            for (int x = 0; x < responses.width; ++x) {
                const double v = responses.at(x, y)[c];
                ch(x, y) = rectify ? std::abs(v) : v;
            }
        const RealImage sm = sigma > 0 ? convolve_separable(ch, k, k) : ch;
        for (int y = 0; y < responses.height; ++y)
            for (int x = 0; x < responses.width; ++x) out.at(x, y)[c] = sm(x, y);
    }
    return out;
}

/// The low-pass channels of `responses` only, unsmoothed: local brightness at the bank's Gaussian scales.
inline ResponseField gaussian_channels(const ResponseField& responses, const FilterBank& bank) {
    std::vector<int> keep;
    for (int c = 0; c < responses.channels; ++c)
        if (!bank.zero_dc(static_cast<std::size_t>(c))) keep.push_back(c);
    ResponseField out;
    out.width = responses.width;
    out.height = responses.height;
    out.channels = static_cast<int>(keep.size());
    out.data.resize(out.pixels() * keep.size());
    for (std::size_t i = 0; i < responses.pixels(); ++i)
        for (std::size_t j = 0; j < keep.size(); ++j)
            out.data[i * keep.size() + j] = responses.data[i * responses.channels + keep[j]];
    return out;
}

}  // namespace layerscope
