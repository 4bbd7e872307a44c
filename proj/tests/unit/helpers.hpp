// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "diffcore/tape.hpp"
#include "oracle.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Fresh per-test scratch directory under the build tree.
inline fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("scale_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<std::string> na, nb;
  for (const auto& e : fs::directory_iterator(a)) na.push_back(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) nb.push_back(e.path().filename().string());
  std::sort(na.begin(), na.end());
  std::sort(nb.begin(), nb.end());
  if (na != nb) return false;
  for (const auto& n : na) {
    if (slurp(a / n) != slurp(b / n)) return false;
  }
  return true;
}

template <class Real>
oracle::Mat to_oracle(const scale::Matrix<Real>& m) {
  oracle::Mat out(static_cast<std::size_t>(m.rows()), oracle::Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r][c] = static_cast<double>(m(r, c));
  }
  return out;
}

template <class Real>
oracle::Vec row(const scale::Matrix<Real>& m, Eigen::Index r) {
  oracle::Vec out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[c] = static_cast<double>(m(r, c));
  return out;
}

/// Weight tensor (out x in) plus 1 x out bias as an oracle layer.
template <class Real>
oracle::RefLayer layer(const scale::ParamTensor<Real>& w, const scale::ParamTensor<Real>& b) {
  return {to_oracle(w.value), row(b.value, 0)};
}

template <class Real>
scale::Matrix<Real> random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, scale);
  scale::Matrix<Real> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(n(gen));
  return m;
}

inline double rel_diff(double a, double b) { return oracle::relative_error(a, b); }

}  // namespace testutil
