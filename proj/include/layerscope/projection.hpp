#pragma once

// Pinhole camera model, marker-plate pose, and the two rectified views used downstream:
// the virtual top view of the current layer plane and the unwrapped side band.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "image.hpp"

namespace layerscope {

struct CameraIntrinsics {
    double f_x = 1400.0;
    double f_y = 1400.0;
    double c_x = 640.0;
    double c_y = 360.0;
    int image_width = 1280;
    int image_height = 720;
    double k1 = 0.0;  // radial distortion
    double k2 = 0.0;

    Eigen::Matrix3d K() const {
        Eigen::Matrix3d k;
        k << f_x, 0, c_x, 0, f_y, c_y, 0, 0, 1;
        return k;
    }

    bool distorted() const noexcept { return k1 != 0.0 || k2 != 0.0; }

    void validate() const {
        if (!(f_x > 0 && f_y > 0)) throw ConfigError("focal lengths must be positive");
        if (image_width <= 0 || image_height <= 0) throw ConfigError("image size must be positive");
        if (!(c_x >= 0 && c_x < image_width && c_y >= 0 && c_y < image_height))
            throw ConfigError("principal point outside the image");
    }
};

/// World-to-camera rigid motion: p_cam = R p_world + t.
struct CameraPose {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();

    Eigen::Vector3d center() const { return -R.transpose() * t; }

    /// Camera at `eye` looking at `target`, image x axis horizontal w.r.t. `up`.
    static CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                              const Eigen::Vector3d& up = Eigen::Vector3d::UnitZ()) {
        const Eigen::Vector3d zc = (target - eye).normalized();
        const Eigen::Vector3d xc = zc.cross(up).normalized();
        const Eigen::Vector3d yc = zc.cross(xc);
        CameraPose p;
        p.R.row(0) = xc.transpose();
        p.R.row(1) = yc.transpose();
        p.R.row(2) = zc.transpose();
        p.t = -p.R * eye;
        return p;
    }
};

inline Eigen::Vector3d to_camera(const Point3& p, const CameraPose& pose) {
    return pose.R * Eigen::Vector3d(p.x, p.y, p.z) + pose.t;
}

/// Pixel of a camera-frame point; radial distortion applied when configured.
inline Point2 camera_to_pixel(const Eigen::Vector3d& pc, const CameraIntrinsics& K) {
    if (!(pc.z() > 1e-9)) throw BehindCamera("point is behind the camera");
    double x = pc.x() / pc.z(), y = pc.y() / pc.z();
    if (K.distorted()) {
        const double r2 = x * x + y * y;
        const double d = 1.0 + K.k1 * r2 + K.k2 * r2 * r2;
        x *= d;
        y *= d;
    }
    return {K.f_x * x + K.c_x, K.f_y * y + K.c_y};
}

inline Point2 project_point(const Point3& p, const CameraIntrinsics& K, const CameraPose& pose) {
    return camera_to_pixel(to_camera(p, pose), K);
}

/// Normalized, undistorted image coordinates of a pixel.
inline Point2 pixel_to_normalized(const Point2& px, const CameraIntrinsics& K) {
    const double xd = (px.x - K.c_x) / K.f_x, yd = (px.y - K.c_y) / K.f_y;
    if (!K.distorted()) return {xd, yd};
    double x = xd, y = yd;
    for (int i = 0; i < 50; ++i) {
        const double r2 = x * x + y * y;
        const double d = 1.0 + K.k1 * r2 + K.k2 * r2 * r2;
        x = xd / d;
        y = yd / d;
    }
    return {x, y};
}

/// Homography from plane coordinates (X, Y) at height z to (undistorted) pixels.
inline Eigen::Matrix3d plane_homography(const CameraIntrinsics& K, const CameraPose& pose, double plane_z) {
    Eigen::Matrix3d M;
    M.col(0) = pose.R.col(0);
    M.col(1) = pose.R.col(1);
    M.col(2) = pose.R.col(2) * plane_z + pose.t;
    return K.K() * M;
}

/// Intersects the viewing ray of a pixel with the plane z = plane_z.
inline Point2 pixel_to_plane(const Point2& px, const CameraIntrinsics& K, const CameraPose& pose, double plane_z) {
    const Point2 n = pixel_to_normalized(px, K);
    const Eigen::Vector3d dir = pose.R.transpose() * Eigen::Vector3d(n.x, n.y, 1.0);
    const Eigen::Vector3d c = pose.center();
    if (std::abs(dir.z()) < 1e-15) throw BehindCamera("ray parallel to plane");
    const double s = (plane_z - c.z()) / dir.z();
    if (s <= 0) throw BehindCamera("plane is behind the camera");
    const Eigen::Vector3d p = c + s * dir;
    return {p.x(), p.y()};
}

// ---------------------------------------------------------------------------------------------
// Marker plate and pose

struct Marker {
    Point2 center;
    double side = 15.0;
};

struct MarkerPlate {
    std::vector<Marker> markers;
    double printable_size = 88.0;
    double plate_size = 130.0;

    /// Four 15 mm corner markers and three 10 mm edge markers; the edge facing the camera is free.
    static MarkerPlate standard() {
        MarkerPlate p;
        for (double x : {-55.0, 55.0})
            for (double y : {-55.0, 55.0}) p.markers.push_back({{x, y}, 15.0});
        p.markers.push_back({{0.0, 55.0}, 10.0});
        p.markers.push_back({{-55.0, 0.0}, 10.0});
        p.markers.push_back({{55.0, 0.0}, 10.0});
        return p;
    }

    Box2 printable_area() const {
        const double h = printable_size / 2;
        return Box2{{-h, -h}, {h, h}};
    }

    void validate() const {
        if (markers.size() != 7) throw ConfigError("marker plate needs exactly 7 markers");
        const double half = plate_size / 2;
        for (std::size_t i = 0; i < markers.size(); ++i) {
            const auto& m = markers[i];
            if (std::abs(m.center.x) + m.side / 2 > half || std::abs(m.center.y) + m.side / 2 > half)
                throw ConfigError("marker outside plate");
            for (std::size_t j = 0; j < i; ++j) {
                const auto& o = markers[j];
                const double gap = (m.side + o.side) / 2;
                if (std::abs(m.center.x - o.center.x) < gap && std::abs(m.center.y - o.center.y) < gap)
                    throw ConfigError("markers overlap");
            }
        }
    }
};

struct PoseEstimate {
    CameraPose pose;
    Eigen::Matrix3d homography;
    double reprojection_rms = 0.0;  // pixels
};

namespace detail {

inline Eigen::Matrix3d normalizing_similarity(const std::vector<Point2>& pts) {
    Point2 c;
    for (const auto& p : pts) c += p;
    c = c / static_cast<double>(pts.size());
    double d = 0.0;
    for (const auto& p : pts) d += distance(p, c);
    d /= static_cast<double>(pts.size());
    const double s = d > 0 ? std::sqrt(2.0) / d : 1.0;
    Eigen::Matrix3d T;
    T << s, 0, -s * c.x, 0, s, -s * c.y, 0, 0, 1;
    return T;
}

inline bool nearly_collinear(const std::vector<Point2>& pts) {
    Point2 c;
    for (const auto& p : pts) c += p;
    c = c / static_cast<double>(pts.size());
    Eigen::Matrix2d S = Eigen::Matrix2d::Zero();
    for (const auto& p : pts) {
        const Eigen::Vector2d d(p.x - c.x, p.y - c.y);
        S += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(S);
    return es.eigenvalues()(1) <= 0 || es.eigenvalues()(0) < 1e-10 * es.eigenvalues()(1);
}

}  // namespace detail

/// Normalized DLT homography from plane points to pixels.
inline Eigen::Matrix3d fit_homography(const std::vector<Point2>& plane, const std::vector<Point2>& pixels) {
    const std::size_t n = plane.size();
    if (n < 4 || pixels.size() != n) throw PoseError("at least 4 correspondences are required");
    if (detail::nearly_collinear(plane) || detail::nearly_collinear(pixels))
        throw PoseError("degenerate marker configuration");
    const Eigen::Matrix3d T1 = detail::normalizing_similarity(plane);
    const Eigen::Matrix3d T2 = detail::normalizing_similarity(pixels);
    Eigen::MatrixXd A(2 * n, 9);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d p = T1 * Eigen::Vector3d(plane[i].x, plane[i].y, 1.0);
        const Eigen::Vector3d q = T2 * Eigen::Vector3d(pixels[i].x, pixels[i].y, 1.0);
        const double u = q.x() / q.z(), v = q.y() / q.z();
        A.row(2 * i) << 0, 0, 0, -p.x(), -p.y(), -p.z(), v * p.x(), v * p.y(), v * p.z();
        A.row(2 * i + 1) << p.x(), p.y(), p.z(), 0, 0, 0, -u * p.x(), -u * p.y(), -u * p.z();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(7) < 1e-12 * sv(0)) throw PoseError("homography is not determined by the markers");
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Eigen::Matrix3d Hn;
    Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    Eigen::Matrix3d H = T2.inverse() * Hn * T1;
    return H / H(2, 2);
}

/// Pose from plane-to-pixel correspondences (plane z = 0). Pixels must be undistorted when the
/// intrinsics carry distortion; use the MarkerPlate overload for raw detections.
inline PoseEstimate estimate_pose(const std::vector<Point2>& plane, const std::vector<Point2>& pixels,
                                  const CameraIntrinsics& K) {
    PoseEstimate est;
    est.homography = fit_homography(plane, pixels);
    const Eigen::Matrix3d M = K.K().inverse() * est.homography;
    double lambda = 2.0 / (M.col(0).norm() + M.col(1).norm());
    if (M(2, 2) * lambda < 0) lambda = -lambda;
    Eigen::Matrix3d R0;
    R0.col(0) = lambda * M.col(0);
    R0.col(1) = lambda * M.col(1);
    R0.col(2) = R0.col(0).cross(R0.col(1));
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(R0, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d R = svd.matrixU() * svd.matrixV().transpose();
    if (R.determinant() < 0) {
        Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
        D(2, 2) = -1;
        R = svd.matrixU() * D * svd.matrixV().transpose();
    }
    est.pose.R = R;
    est.pose.t = lambda * M.col(2);
    if (!(est.pose.t.z() > 0)) throw PoseError("plate is not in front of the camera");
    if (!(est.pose.center().z() > 0)) throw PoseError("plate normal faces away from the camera");

    double ss = 0.0;
    for (std::size_t i = 0; i < plane.size(); ++i) {
        CameraIntrinsics pin = K;
        pin.k1 = pin.k2 = 0.0;
        const Point2 q = project_point({plane[i].x, plane[i].y, 0.0}, pin, est.pose);
        const Point2 d = q - pixels[i];
        ss += dot(d, d);
    }
    est.reprojection_rms = std::sqrt(ss / static_cast<double>(plane.size()));
    return est;
}

/// Pose from detected marker centers; entry i corresponds to plate.markers[i] and non-finite
/// entries mark undetected markers.
inline PoseEstimate estimate_pose(const std::vector<Point2>& marker_pixels, const MarkerPlate& plate,
                                  const CameraIntrinsics& K) {
    if (marker_pixels.size() > plate.markers.size()) throw PoseError("more detections than markers");
    std::vector<Point2> plane, px;
    for (std::size_t i = 0; i < marker_pixels.size(); ++i) {
        if (!is_finite(marker_pixels[i])) continue;
        plane.push_back(plate.markers[i].center);
        const Point2 n = pixel_to_normalized(marker_pixels[i], K);
        px.push_back({K.f_x * n.x + K.c_x, K.f_y * n.y + K.c_y});
    }
    if (plane.size() < 4) throw PoseError("at least 4 markers are required, got " + std::to_string(plane.size()));
    return estimate_pose(plane, px, K);
}

// ---------------------------------------------------------------------------------------------
// Rectified views

/// Metric raster of a plane. Pixel (u, v) is world (origin.x + u / px_per_mm, origin.y - v / px_per_mm).
struct PlaneView {
    GrayImage image;
    double px_per_mm = 5.26;
    Point2 origin;
    double plane_z = 0.0;

    Point2 pixel_to_world(double u, double v) const noexcept { return {origin.x + u / px_per_mm, origin.y - v / px_per_mm}; }
    Point2 world_to_pixel(const Point2& w) const noexcept {
        return {(w.x - origin.x) * px_per_mm, (origin.y - w.y) * px_per_mm};
    }
};

inline int view_extent_px(double mm, double px_per_mm) { return static_cast<int>(std::floor(mm * px_per_mm + 1e-9)) + 1; }

/// Inverse-warps `frame` onto the plane z = plane_z over `area` (default: the printable area).
template <typename T>
PlaneView virtual_top_view(const Image<T>& frame, const CameraIntrinsics& K, const CameraPose& pose, double plane_z,
                           double px_per_mm = 5.26, std::optional<Box2> area = std::nullopt) {
    if (!(px_per_mm > 0)) throw ConfigError("px_per_mm must be positive");
    const Box2 a = area.value_or(MarkerPlate::standard().printable_area());
    PlaneView view;
    view.px_per_mm = px_per_mm;
    view.origin = {a.min.x, a.max.y};
    view.plane_z = plane_z;
    if (to_camera({a.center().x, a.center().y, plane_z}, pose).z() <= 1e-9)
        throw BehindCamera("view plane is behind the camera");
    const int w = view_extent_px(a.width(), px_per_mm), h = view_extent_px(a.height(), px_per_mm);
    view.image = GrayImage(w, h, 0);
    const Eigen::Matrix3d H = plane_homography(K, pose, plane_z);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            const Point2 wp = view.pixel_to_world(u, v);
            const Eigen::Vector3d q = H * Eigen::Vector3d(wp.x, wp.y, 1.0);
            if (q.z() <= 1e-9) continue;
            Point2 px{q.x() / q.z(), q.y() / q.z()};
            if (K.distorted()) px = camera_to_pixel(Eigen::Vector3d((px.x - K.c_x) / K.f_x, (px.y - K.c_y) / K.f_y, 1.0), K);
            view.image(u, v) = clamp_to_u8(sample_bilinear(frame, px.x, px.y, 0.0));
        }
    return view;
}

/// Line y = m x + b on the picture plane through the leftmost and rightmost outline points.
struct Delimiter {
    double m = 0.0;
    double b = 0.0;

    /// Picture-plane points on or below the line (larger y) face the camera.
    bool visible(const Point2& px) const noexcept { return px.y >= m * px.x + b - 1e-6; }
};

inline Delimiter visibility_delimiter(const std::vector<Point2>& outline_px) {
    if (outline_px.size() < 2) throw DelimiterError("need at least two outline points");
    auto [lo, hi] = std::minmax_element(outline_px.begin(), outline_px.end(),
                                        [](const Point2& a, const Point2& b) { return a.x < b.x; });
    if (!(hi->x - lo->x > 1e-9)) throw DelimiterError("outline has no horizontal extent");
    Eigen::Matrix2d A;
    A << lo->x, 1.0, hi->x, 1.0;
    const Eigen::Vector2d sol = A.partialPivLu().solve(Eigen::Vector2d(lo->y, hi->y));
    return {sol(0), sol(1)};
}

struct SideViewOptions {
    double px_per_mm = 5.26;
    double end_trim = 0.05;       // fraction of the visible arc dropped at each end
    double surface_offset = 0.0;  // mm, outward offset of the outline onto the wall surface
};

/// Unwrapped band of the camera-facing wall: column c is arc length c / px_per_mm along the
/// visible outline, row r is height z = r / px_per_mm above the bed.
struct SideView : PlaneView {
    std::vector<Point2> column_points;  // world XY of each column
    Delimiter delimiter;
};

/// Visible arc of a closed outline, sampled every `step` mm (longest contiguous run).
inline std::vector<Point2> visible_arc(const Polyline& outline, const CameraIntrinsics& K, const CameraPose& pose,
                                       double z, double step, Delimiter* delimiter_out = nullptr) {
    if (outline.size() < 3) throw EmptySideView("outline has fewer than three vertices");
    std::vector<Point2> proj;
    for (const auto& p : outline) proj.push_back(project_point({p.x, p.y, z}, K, pose));
    const Delimiter d = visibility_delimiter(proj);
    if (delimiter_out) *delimiter_out = d;
    const Polyline dense = resample_loop(outline, step);
    const std::size_t n = dense.size();
    std::vector<char> vis(n);
    for (std::size_t i = 0; i < n; ++i) vis[i] = d.visible(project_point({dense[i].x, dense[i].y, z}, K, pose));
    if (std::find(vis.begin(), vis.end(), 0) == vis.end()) return dense;
    std::size_t best_start = 0, best_len = 0;
    const std::size_t first_hidden = static_cast<std::size_t>(std::find(vis.begin(), vis.end(), 0) - vis.begin());
    std::size_t run = 0, start = 0;
    for (std::size_t k = 1; k <= n; ++k) {
        const std::size_t i = (first_hidden + k) % n;
        if (vis[i]) {
            if (run == 0) start = i;
            if (++run > best_len) {
                best_len = run;
                best_start = start;
            }
        } else {
            run = 0;
        }
    }
    std::vector<Point2> arc;
    for (std::size_t k = 0; k < best_len; ++k) arc.push_back(dense[(best_start + k) % n]);
    return arc;
}

template <typename T>
SideView pseudo_side_view(const Image<T>& frame, const CameraIntrinsics& K, const CameraPose& pose,
                          const Polyline& outline, double layer_height, int current_layer,
                          const SideViewOptions& opt = {}) {
    if (!(layer_height > 0) || current_layer < 0) throw ConfigError("invalid layer height or index");
    const double step = 1.0 / opt.px_per_mm;
    const double z_top = (current_layer + 1) * layer_height;
    const Polyline surface = offset_loop(outline, opt.surface_offset);
    SideView view;
    auto arc = visible_arc(surface, K, pose, z_top, step, &view.delimiter);
    const std::size_t trim = static_cast<std::size_t>(std::floor(arc.size() * opt.end_trim));
    if (arc.size() < 2 * trim + 2) throw EmptySideView("visible arc is empty");
    arc = std::vector<Point2>(arc.begin() + static_cast<long>(trim), arc.end() - static_cast<long>(trim));

    const double band = (current_layer + 2) * layer_height;
    const int rows = view_extent_px(band, opt.px_per_mm);
    view.px_per_mm = opt.px_per_mm;
    view.plane_z = 0.0;
    view.image = GrayImage(static_cast<int>(arc.size()), rows, 0);
    view.column_points = arc;
    for (int c = 0; c < view.image.width(); ++c)
        for (int r = 0; r < rows; ++r) {
            const Point3 w{arc[c].x, arc[c].y, r * step};
            const Eigen::Vector3d pc = to_camera(w, pose);
            if (pc.z() <= 1e-9) continue;
            const Point2 px = camera_to_pixel(pc, K);
            view.image(c, r) = clamp_to_u8(sample_bilinear(frame, px.x, px.y, 0.0));
        }
    return view;
}

}  // namespace layerscope
