#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "samst/ops.hpp"

namespace samst {

// One of the 8 symmetries of the square: index = 4 * flip + quarter_turns.
// The horizontal flip is applied first, then the rotation. Each element acts
// on pixel-centred integer coordinates (2x - (W-1), 2y - (H-1)) through a
// signed permutation matrix, which makes compose/inverse exact.
class DihedralTransform {
 public:
  using Matrix = std::array<int, 4>;  // row-major 2x2 acting on (x, y)

  constexpr DihedralTransform() = default;
  explicit DihedralTransform(int index) : index_(index) {
    if (index < 0 || index > 7) throw ContractError("dihedral index must be in 0..7, got " + std::to_string(index));
  }

  static constexpr int count = 8;
  static DihedralTransform identity() { return DihedralTransform(0); }

  int index() const noexcept { return index_; }
  bool flips() const noexcept { return index_ >= 4; }
  int quarter_turns() const noexcept { return index_ % 4; }
  // Odd quarter turns swap H and W.
  bool swaps_axes() const noexcept { return quarter_turns() % 2 == 1; }

  Matrix matrix() const {
    Matrix m = flips() ? Matrix{-1, 0, 0, 1} : Matrix{1, 0, 0, 1};
    for (int r = 0; r < quarter_turns(); ++r) m = multiply(Matrix{0, 1, -1, 0}, m);
    return m;
  }

  // (a.compose(b))(x) == a(b(x))
  DihedralTransform compose(const DihedralTransform& b) const { return from_matrix(multiply(matrix(), b.matrix())); }

  DihedralTransform inverse() const {
    const Matrix m = matrix();
    return from_matrix(Matrix{m[0], m[2], m[1], m[3]});
  }

  static DihedralTransform from_matrix(const Matrix& m) {
    for (int i = 0; i < count; ++i) {
      if (DihedralTransform(i).matrix() == m) return DihedralTransform(i);
    }
    throw ContractError("matrix is not an element of the dihedral group");
  }

  Shape output_shape(const Shape& in) const {
    if (in.size() != 3) throw ShapeError("dihedral transform needs C x H x W, got " + shape_str(in));
    return swaps_axes() ? Shape{in[0], in[2], in[1]} : in;
  }

  // Gather indices: out[i] = in[perm[i]].
  std::vector<std::size_t> permutation(const Shape& in) const {
    const Shape out = output_shape(in);
    const long H = static_cast<long>(in[1]), W = static_cast<long>(in[2]);
    const long Ho = static_cast<long>(out[1]), Wo = static_cast<long>(out[2]);
    const Matrix m = matrix();
    std::vector<std::size_t> perm(shape_numel(in));
    for (std::size_t c = 0; c < in[0]; ++c) {
      for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
          const long cx = 2 * x - (W - 1), cy = 2 * y - (H - 1);
          const long nx = m[0] * cx + m[1] * cy, ny = m[2] * cx + m[3] * cy;
          const long ox = (nx + Wo - 1) / 2, oy = (ny + Ho - 1) / 2;
          perm[(c * Ho + oy) * Wo + ox] = (c * H + y) * W + x;
        }
      }
    }
    return perm;
  }

  template <class T>
  Tensor<T> apply(const Tensor<T>& x) const {
    const auto perm = permutation(x.shape());
    Tensor<T> y(output_shape(x.shape()));
    for (std::size_t i = 0; i < perm.size(); ++i) y[i] = x[perm[i]];
    return y;
  }

  template <class T>
  Var<T> apply(Var<T> x) const {
    if (index_ == 0) return x;
    return ops::gather(x, output_shape(x.shape()), permutation(x.shape()), "dihedral");
  }

  friend bool operator==(const DihedralTransform&, const DihedralTransform&) = default;

 private:
  static Matrix multiply(const Matrix& a, const Matrix& b) {
    return Matrix{a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2],
                  a[2] * b[1] + a[3] * b[3]};
  }

  int index_ = 0;
};

inline std::vector<DihedralTransform> all_dihedral_transforms() {
  std::vector<DihedralTransform> out;
  for (int i = 0; i < DihedralTransform::count; ++i) out.emplace_back(i);
  return out;
}

}  // namespace samst
