#pragma once

#include <array>
#include <cmath>

namespace dgm {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double& operator[](int a) { return a == 0 ? x : (a == 1 ? y : z); }
  constexpr double operator[](int a) const { return a == 0 ? x : (a == 1 ? y : z); }

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }

  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
constexpr Vec3 operator/(const Vec3& a, double s) { return {a.x / s, a.y / s, a.z / s}; }

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

/// Unit quaternion (w, x, y, z) for particle orientation.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  void normalize() {
    const double n = norm();
    w /= n;
    x /= n;
    y /= n;
    z /= n;
  }
  friend constexpr bool operator==(const Quaternion&, const Quaternion&) = default;
};

// Integrates dq/dt = 0.5 * (0, omega) * q over dt (explicit Euler) and renormalizes.
inline Quaternion rotate_by(const Quaternion& q, const Vec3& omega, double dt) {
  const double h = 0.5 * dt;
  Quaternion r{q.w + h * (-omega.x * q.x - omega.y * q.y - omega.z * q.z),
               q.x + h * (omega.x * q.w + omega.y * q.z - omega.z * q.y),
               q.y + h * (omega.y * q.w + omega.z * q.x - omega.x * q.z),
               q.z + h * (omega.z * q.w + omega.x * q.y - omega.y * q.x)};
  r.normalize();
  return r;
}

}  // namespace dgm
