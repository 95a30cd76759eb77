#pragma once

// Diagonal-covariance Gaussian mixture fitted by expectation-maximization.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "image.hpp"
#include "texture.hpp"

namespace layerscope {

struct GmmOptions {
    int max_iter = 200;
    double tol = 1e-5;  // per-sample log-likelihood gain
    double variance_floor = 1e-6;
    // a component whose responsibility mass drops below this many samples is re-seeded (once)
    double collapse_mass = 1.0;
    int kmeans_iter = 10;  // Lloyd refinement of the seeds before EM
    int restarts = 8;
    bool tied = true;  // one diagonal covariance shared by all components
};

struct GmmModel {
    int k = 0;
    int dim = 0;
    std::vector<double> weights;
    std::vector<double> means;      // k x dim, row-major
    std::vector<double> variances;  // k x dim, row-major
    std::vector<double> log_likelihood;  // per-sample average, one entry per parameter set
    std::vector<std::size_t> segment_starts{0};  // indices into log_likelihood where a re-seed restarted EM
    int iterations = 0;
    bool converged = false;
    bool reseeded = false;

    const double* mean(int j) const noexcept { return means.data() + static_cast<std::size_t>(j) * dim; }
    const double* variance(int j) const noexcept { return variances.data() + static_cast<std::size_t>(j) * dim; }

    /// log(w_j) + log N(x | mu_j, Sigma_j) for every component.
    void log_joint(const double* x, double* out) const noexcept {
        for (int j = 0; j < k; ++j) {
            const double* m = mean(j);
            const double* v = variance(j);
            double q = 0.0, logdet = 0.0;
            for (int d = 0; d < dim; ++d) {
                const double diff = x[d] - m[d];
                q += diff * diff / v[d];
                logdet += std::log(v[d]);
            }
            out[j] = std::log(weights[j]) - 0.5 * (q + logdet + dim * std::log(2.0 * std::numbers::pi));
        }
    }
};

namespace detail {

inline double log_sum_exp(const double* v, int n) noexcept {
    const double m = *std::max_element(v, v + n);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

inline double sq_dist(const double* a, const double* b, const double* inv_var, int d) noexcept {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]) * inv_var[i];
    return s;
}

inline int nearest_center(const double* x, const std::vector<double>& centers, const double* inv_var, int k, int d) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) {
        const double v = sq_dist(x, centers.data() + static_cast<std::size_t>(j) * d, inv_var, d);
        if (v < bd) {
            bd = v;
            best = j;
        }
    }
    return best;
}

struct GmmWork {
    const std::vector<double>& x;
    std::size_t n;
    int d;
};

// Precomputed per-component constants make the E-step a tight loop.
struct ComponentCache {
    std::vector<double> inv_var;
    std::vector<double> offset;
};

inline ComponentCache cache_components(const GmmModel& m) {
    ComponentCache c;
    c.inv_var.resize(m.variances.size());
    c.offset.resize(m.k);
    for (int j = 0; j < m.k; ++j) {
        double logdet = 0.0;
        for (int d = 0; d < m.dim; ++d) {
            const std::size_t i = static_cast<std::size_t>(j) * m.dim + d;
            c.inv_var[i] = 1.0 / m.variances[i];
            logdet += std::log(m.variances[i]);
        }
        c.offset[j] = std::log(m.weights[j]) - 0.5 * (logdet + m.dim * std::log(2.0 * std::numbers::pi));
    }
    return c;
}

inline void log_joint_cached(const GmmModel& m, const ComponentCache& c, const double* x, double* out) noexcept {
    for (int j = 0; j < m.k; ++j) {
        const double* mu = m.mean(j);
        const double* iv = c.inv_var.data() + static_cast<std::size_t>(j) * m.dim;
        double q = 0.0;
        for (int d = 0; d < m.dim; ++d) {
            const double diff = x[d] - mu[d];
            q += diff * diff * iv[d];
        }
        out[j] = c.offset[j] - 0.5 * q;
    }
}

// E-step: responsibilities into r (n x k) and the per-sample average log-likelihood.
inline double e_step(const GmmModel& m, const GmmWork& w, std::vector<double>& r) {
    const auto cache = cache_components(m);
    r.resize(w.n * m.k);
    double ll = 0.0;
    for (std::size_t i = 0; i < w.n; ++i) {
        double* ri = r.data() + i * m.k;
        log_joint_cached(m, cache, w.x.data() + i * w.d, ri);
        const double lse = log_sum_exp(ri, m.k);
        for (int j = 0; j < m.k; ++j) ri[j] = std::exp(ri[j] - lse);
        ll += lse;
    }
    return ll / static_cast<double>(w.n);
}

// M-step; returns the responsibility mass of each component.
inline std::vector<double> m_step(GmmModel& m, const GmmWork& w, const std::vector<double>& r, const std::vector<double>& floor,
                                  bool tied) {
    const int k = m.k, d = m.dim;
    std::vector<double> mass(k, 0.0);
    std::fill(m.means.begin(), m.means.end(), 0.0);
    std::fill(m.variances.begin(), m.variances.end(), 0.0);
    for (std::size_t i = 0; i < w.n; ++i) {
        const double* xi = w.x.data() + i * d;
        for (int j = 0; j < k; ++j) {
            const double rij = r[i * k + j];
            mass[j] += rij;
            double* mu = m.means.data() + static_cast<std::size_t>(j) * d;
            for (int c = 0; c < d; ++c) mu[c] += rij * xi[c];
        }
    }
    for (int j = 0; j < k; ++j) {
        double* mu = m.means.data() + static_cast<std::size_t>(j) * d;
        for (int c = 0; c < d; ++c) mu[c] = mass[j] > 0 ? mu[c] / mass[j] : 0.0;
    }
    for (std::size_t i = 0; i < w.n; ++i) {
        const double* xi = w.x.data() + i * d;
        for (int j = 0; j < k; ++j) {
            const double rij = r[i * k + j];
            const double* mu = m.means.data() + static_cast<std::size_t>(j) * d;
            double* var = m.variances.data() + static_cast<std::size_t>(j) * d;
            for (int c = 0; c < d; ++c) var[c] += rij * (xi[c] - mu[c]) * (xi[c] - mu[c]);
        }
    }
    double total = 0.0;
    for (double v : mass) total += v;
    if (tied) {
        std::vector<double> pooled(d, 0.0);
        for (int j = 0; j < k; ++j)
            for (int c = 0; c < d; ++c) pooled[c] += m.variances[static_cast<std::size_t>(j) * d + c];
        for (int j = 0; j < k; ++j)
            for (int c = 0; c < d; ++c) m.variances[static_cast<std::size_t>(j) * d + c] = std::max(pooled[c] / total, floor[c]);
    } else {
        for (int j = 0; j < k; ++j) {
            double* var = m.variances.data() + static_cast<std::size_t>(j) * d;
            for (int c = 0; c < d; ++c) var[c] = std::max(mass[j] > 0 ? var[c] / mass[j] : 0.0, floor[c]);
        }
    }
    for (int j = 0; j < k; ++j) m.weights[j] = mass[j] / total;
    return mass;
}

}  // namespace detail

namespace detail {

inline GmmModel fit_once(const std::vector<double>& x, std::size_t n, int d, int k, std::uint64_t seed,
                         const std::vector<double>& global_var, const GmmOptions& opt) {
    const std::vector<double> floor(d, opt.variance_floor);
    GmmModel m;
    m.k = k;
    m.dim = d;
    m.weights.assign(k, 1.0 / k);
    m.means.resize(static_cast<std::size_t>(k) * d);
    m.variances.resize(static_cast<std::size_t>(k) * d);
    for (int j = 0; j < k; ++j) std::copy(global_var.begin(), global_var.end(), m.variances.begin() + static_cast<std::ptrdiff_t>(j) * d);

    // k-means++ seeding in per-channel standardized units
    std::vector<double> inv_var(d);
    for (int c = 0; c < d; ++c) inv_var[c] = 1.0 / global_var[c];
    std::mt19937_64 rng(seed);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    for (int j = 0; j < k; ++j) {
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(pick * d), x.begin() + static_cast<std::ptrdiff_t>((pick + 1) * d),
                  m.means.begin() + static_cast<std::ptrdiff_t>(j) * d);
        if (j + 1 == k) break;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            best[i] = std::min(best[i], detail::sq_dist(x.data() + i * d, m.mean(j), inv_var.data(), d));
            total += best[i];
        }
        if (total <= 0.0) throw FitError("degenerate field: fewer than k distinct feature vectors");
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            u -= best[i];
            if (u < 0.0 && best[i] > 0.0) {
                pick = i;
                break;
            }
        }
    }

    if (k > 1 && opt.kmeans_iter > 0) {
        std::vector<int> assign(n, -1);
        std::vector<double> sum(static_cast<std::size_t>(k) * d);
        std::vector<std::size_t> count(k);
        for (int it = 0; it < opt.kmeans_iter; ++it) {
            bool changed = false;
            for (std::size_t i = 0; i < n; ++i) {
                const int a = detail::nearest_center(x.data() + i * d, m.means, inv_var.data(), k, d);
                changed |= a != assign[i];
                assign[i] = a;
            }
            if (!changed) break;
            std::fill(sum.begin(), sum.end(), 0.0);
            std::fill(count.begin(), count.end(), 0);
            for (std::size_t i = 0; i < n; ++i) {
                ++count[assign[i]];
                for (int c = 0; c < d; ++c) sum[static_cast<std::size_t>(assign[i]) * d + c] += x[i * d + c];
            }
            for (int j = 0; j < k; ++j)
                if (count[j])
                    for (int c = 0; c < d; ++c) m.means[static_cast<std::size_t>(j) * d + c] = sum[static_cast<std::size_t>(j) * d + c] / count[j];
        }
        // start EM from the hard partition's moments
        std::fill(count.begin(), count.end(), 0);
        std::vector<double> var(static_cast<std::size_t>(k) * d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const int a = detail::nearest_center(x.data() + i * d, m.means, inv_var.data(), k, d);
            ++count[a];
            for (int c = 0; c < d; ++c) {
                const double diff = x[i * d + c] - m.means[static_cast<std::size_t>(a) * d + c];
                var[static_cast<std::size_t>(a) * d + c] += diff * diff;
            }
        }
        double wsum = 0.0;
        for (int j = 0; j < k; ++j) {
            for (int c = 0; c < d; ++c) {
                const std::size_t idx = static_cast<std::size_t>(j) * d + c;
                m.variances[idx] = count[j] > 1 ? std::max(var[idx] / count[j], floor[c]) : global_var[c];
            }
            m.weights[j] = std::max<double>(count[j], 1.0);
            wsum += m.weights[j];
        }
        for (double& w : m.weights) w /= wsum;
        if (opt.tied) {
            for (int c = 0; c < d; ++c) {
                double pooled = 0.0;
                for (int j = 0; j < k; ++j) pooled += var[static_cast<std::size_t>(j) * d + c];
                for (int j = 0; j < k; ++j) m.variances[static_cast<std::size_t>(j) * d + c] = std::max(pooled / n, floor[c]);
            }
        }
    }

    const detail::GmmWork work{x, n, d};
    std::vector<double> r;
    double ll = detail::e_step(m, work, r);
    m.log_likelihood.push_back(ll);
    for (m.iterations = 0; m.iterations < opt.max_iter;) {
        const auto mass = detail::m_step(m, work, r, floor, opt.tied);
        ++m.iterations;
        const auto collapsed = std::find_if(mass.begin(), mass.end(), [&](double v) { return v < opt.collapse_mass; });
        if (collapsed != mass.end() && !m.reseeded && k > 1) {
            // move the dead component onto the worst-explained sample and restart the monotone run
            const int j = static_cast<int>(collapsed - mass.begin());
            detail::e_step(m, work, r);
            const auto cache = detail::cache_components(m);
            std::vector<double> lj(k);
            std::size_t worst = 0;
            double worst_ll = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n; ++i) {
                detail::log_joint_cached(m, cache, x.data() + i * d, lj.data());
                const double v = detail::log_sum_exp(lj.data(), k);
                if (v < worst_ll) {
                    worst_ll = v;
                    worst = i;
                }
            }
            std::copy(x.begin() + static_cast<std::ptrdiff_t>(worst * d), x.begin() + static_cast<std::ptrdiff_t>((worst + 1) * d),
                      m.means.begin() + static_cast<std::ptrdiff_t>(j) * d);
            std::copy(global_var.begin(), global_var.end(), m.variances.begin() + static_cast<std::ptrdiff_t>(j) * d);
            m.weights[j] = 1.0 / k;
            double s = 0.0;
            for (double w : m.weights) s += w;
            for (double& w : m.weights) w /= s;
            m.reseeded = true;
            ll = detail::e_step(m, work, r);
            m.segment_starts.push_back(m.log_likelihood.size());
            m.log_likelihood.push_back(ll);
            continue;
        }
        const double next = detail::e_step(m, work, r);
        m.log_likelihood.push_back(next);
        const double gain = next - ll;
        ll = next;
        if (gain < opt.tol) {
            m.converged = true;
            break;
        }
    }
    return m;
}

}  // namespace detail

/// Fits a k-component mixture to the feature vectors of `field`, or of the pixels where
/// `mask` is set when a mask is given.
inline GmmModel fit_gmm(const ResponseField& field, int k, std::uint64_t seed, const GmmOptions& opt = {},
                        const Mask* mask = nullptr) {
    if (k < 1) throw FitError("component count must be positive");
    const int d = field.channels;
    std::vector<double> x;
    if (mask) {
        if (mask->width() != field.width || mask->height() != field.height) throw FitError("mask size mismatch");
        for (int y = 0; y < field.height; ++y)
            for (int xx = 0; xx < field.width; ++xx)
                if ((*mask)(xx, y)) x.insert(x.end(), field.at(xx, y), field.at(xx, y) + d);
    } else {
        x = field.data;
    }
    const std::size_t n = d > 0 ? x.size() / static_cast<std::size_t>(d) : 0;
    if (d < 1 || n < static_cast<std::size_t>(10 * k))
        throw FitError("need at least " + std::to_string(10 * k) + " samples, have " + std::to_string(n));
    for (double v : x)
        if (!std::isfinite(v)) throw FitError("non-finite feature value");

    std::vector<double> global_mean(d, 0.0), global_var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) global_mean[c] += x[i * d + c];
    for (double& v : global_mean) v /= static_cast<double>(n);
    double spread = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) global_var[c] += (x[i * d + c] - global_mean[c]) * (x[i * d + c] - global_mean[c]);
    for (double& v : global_var) {
        v /= static_cast<double>(n);
        spread += v;
        v = std::max(v, opt.variance_floor);
    }
    if (k > 1 && spread <= 0.0) throw FitError("degenerate field: all feature vectors identical");

    // independent restarts; the best final log-likelihood wins, ties to the earliest
    std::mt19937_64 seeder(seed);
    GmmModel best;
    for (int r = 0; r < std::max(1, opt.restarts); ++r) {
        const std::uint64_t s = r == 0 ? seed : seeder();
        auto m = detail::fit_once(x, n, d, k, s, global_var, opt);
        if (r == 0 || m.log_likelihood.back() > best.log_likelihood.back()) best = std::move(m);
    }
    return best;
}

/// Per-pixel argmax of the posterior; ties go to the lowest component index.
inline LabelImage segment(const ResponseField& field, const GmmModel& model) {
    if (field.channels != model.dim) throw FitError("feature dimension does not match the model");
    LabelImage labels(field.width, field.height, 0);
    const auto cache = detail::cache_components(model);
    std::vector<double> lj(model.k);
    for (int y = 0; y < field.height; ++y)
        for (int x = 0; x < field.width; ++x) {
            detail::log_joint_cached(model, cache, field.at(x, y), lj.data());
            int best = 0;
            for (int j = 1; j < model.k; ++j)
                if (lj[j] > lj[best]) best = j;
            labels(x, y) = best;
        }
    return labels;
}

}  // namespace layerscope
