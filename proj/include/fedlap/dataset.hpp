// Dataset ingestion: CSV (one-hot categoricals, z-scored numerics), the IDX
// image/label binary format, and synthetic generators used by the oracle
// testbeds (quadratic clients and Gaussian blobs).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlap/matrix.hpp"
#include "fedlap/rng.hpp"

namespace fedlap {

struct FeatureStats {
  Vector mean;
  Vector stddev;  // 1.0 for constant or one-hot columns
};

struct Dataset {
  Matrix train_inputs;
  std::vector<int> train_labels;
  Matrix test_inputs;
  std::vector<int> test_labels;
  FeatureStats feature_stats;
  std::size_t class_count = 2;

  std::size_t input_dim() const { return train_inputs.cols; }
};

struct CsvSchema {
  int label_col = -1;                    // -1 = last column
  std::vector<std::size_t> categorical_cols;  // empty = auto-detect non-numeric columns
  std::string missing_token = "?";
  std::string positive_label;            // optional; otherwise labels sorted lexicographically
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

// Z-score columns in place using the supplied statistics.
inline void apply_standardization(Matrix& m, const FeatureStats& st) {
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = (m(i, j) - st.mean[j]) / st.stddev[j];
}

inline FeatureStats compute_stats(const Matrix& m, const std::vector<bool>& standardize_col) {
  FeatureStats st;
  st.mean.assign(m.cols, 0.0);
  st.stddev.assign(m.cols, 1.0);
  if (m.rows == 0) return st;
  for (std::size_t j = 0; j < m.cols; ++j) {
    if (!standardize_col[j]) continue;
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) s += m(i, j);
    const double mean = s / static_cast<double>(m.rows);
    double v = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) {
      const double d = m(i, j) - mean;
      v += d * d;
    }
    const double sd = std::sqrt(v / static_cast<double>(m.rows));
    st.mean[j] = mean;
    st.stddev[j] = sd > 1e-12 ? sd : 1.0;
  }
  return st;
}

// CSV -> Dataset. Rows containing the missing token are dropped; columns with
// any non-numeric value are one-hot encoded (categories sorted); numeric
// columns are z-scored with train-split statistics; the train/test split is a
// seeded stratified holdout.
inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv file: " + path);

  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t line_no = 0, n_cols = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv_line(line);
    if (n_cols == 0) n_cols = fields.size();
    if (fields.size() != n_cols)
      throw std::runtime_error(path + ": unparseable row at line " + std::to_string(line_no));
    bool missing = false;
    for (const auto& f : fields)
      if (f == schema.missing_token) missing = true;
    if (!missing) rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no usable rows (all missing or empty)");

  const std::size_t label_col =
      schema.label_col < 0 ? n_cols - 1 : static_cast<std::size_t>(schema.label_col);
  if (label_col >= n_cols) throw std::runtime_error("label column out of range");

  // Column typing: listed in the schema, else numeric unless a value fails
  // to parse.
  std::vector<bool> categorical(n_cols, false);
  if (!schema.categorical_cols.empty()) {
    for (std::size_t j : schema.categorical_cols) {
      if (j >= n_cols) throw std::runtime_error("categorical column index out of range");
      categorical[j] = true;
    }
  } else {
    for (std::size_t j = 0; j < n_cols; ++j) {
      if (j == label_col) continue;
      double tmp;
      for (const auto& r : rows)
        if (!detail::parse_double(r[j], tmp)) {
          categorical[j] = true;
          break;
        }
    }
  }

  // Category vocabularies, sorted for determinism.
  std::vector<std::vector<std::string>> vocab(n_cols);
  for (std::size_t j = 0; j < n_cols; ++j) {
    if (!categorical[j] || j == label_col) continue;
    std::set<std::string> vals;
    for (const auto& r : rows) vals.insert(r[j]);
    vocab[j].assign(vals.begin(), vals.end());
  }

  std::set<std::string> label_vals;
  for (const auto& r : rows) label_vals.insert(r[label_col]);
  std::vector<std::string> labels(label_vals.begin(), label_vals.end());
  if (!schema.positive_label.empty() && labels.size() == 2) {
    // force the positive label to index 1
    if (labels[1] != schema.positive_label) std::swap(labels[0], labels[1]);
    if (labels[1] != schema.positive_label)
      throw std::runtime_error("positive label '" + schema.positive_label + "' not found");
  }
  std::map<std::string, int> label_index;
  for (std::size_t i = 0; i < labels.size(); ++i) label_index[labels[i]] = static_cast<int>(i);

  std::size_t width = 0;
  for (std::size_t j = 0; j < n_cols; ++j) {
    if (j == label_col) continue;
    width += categorical[j] ? vocab[j].size() : 1;
  }

  Matrix all(rows.size(), width);
  std::vector<int> all_y(rows.size());
  std::vector<bool> standardize_col(width, false);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::size_t col = 0;
    for (std::size_t j = 0; j < n_cols; ++j) {
      if (j == label_col) continue;
      if (categorical[j]) {
        const auto it = std::lower_bound(vocab[j].begin(), vocab[j].end(), rows[i][j]);
        all(i, col + static_cast<std::size_t>(it - vocab[j].begin())) = 1.0;
        col += vocab[j].size();
      } else {
        double v = 0.0;
        if (!detail::parse_double(rows[i][j], v))
          throw std::runtime_error(path + ": non-numeric value '" + rows[i][j] +
                                   "' in numeric column " + std::to_string(j));
        all(i, col) = v;
        standardize_col[col] = true;
        ++col;
      }
    }
    all_y[i] = label_index.at(rows[i][label_col]);
  }

  // Stratified seeded holdout.
  const std::size_t n = rows.size();
  std::vector<std::size_t> test_idx;
  {
    Rng rng(derive_seed(schema.seed, 0xc5fu));
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[all_y[i]].push_back(i);
    for (auto& [c, idx] : by_class) {
      rng.shuffle(idx);
      const std::size_t t = static_cast<std::size_t>(
          std::floor(schema.test_fraction * static_cast<double>(idx.size())));
      test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + t);
    }
  }
  std::vector<bool> is_test(n, false);
  for (std::size_t i : test_idx) is_test[i] = true;

  Dataset ds;
  ds.class_count = labels.size();
  std::size_t n_test = test_idx.size(), n_train = n - n_test;
  ds.train_inputs = Matrix(n_train, width);
  ds.test_inputs = Matrix(n_test, width);
  std::size_t tr = 0, te = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_test[i]) {
      std::copy(all.row(i), all.row(i) + width, ds.test_inputs.row(te));
      ds.test_labels.push_back(all_y[i]);
      ++te;
    } else {
      std::copy(all.row(i), all.row(i) + width, ds.train_inputs.row(tr));
      ds.train_labels.push_back(all_y[i]);
      ++tr;
    }
  }
  ds.feature_stats = compute_stats(ds.train_inputs, standardize_col);
  apply_standardization(ds.train_inputs, ds.feature_stats);
  apply_standardization(ds.test_inputs, ds.feature_stats);
  return ds;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(path + ": truncated file");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

inline std::pair<Matrix, std::vector<int>> load_idx_pair(const std::string& images_path,
                                                         const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open idx file: " + images_path);
  if (read_be32(img, images_path) != 0x00000803u)
    throw std::runtime_error(images_path + ": bad magic (want 0x00000803)");
  const std::uint32_t n = read_be32(img, images_path);
  const std::uint32_t h = read_be32(img, images_path);
  const std::uint32_t w = read_be32(img, images_path);
  Matrix x(n, static_cast<std::size_t>(h) * w);
  std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw std::runtime_error(images_path + ": truncated file");
    double* row = x.row(i);
    for (std::size_t j = 0; j < buf.size(); ++j) row[j] = buf[j] / 255.0;
  }

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open idx file: " + labels_path);
  if (read_be32(lab, labels_path) != 0x00000801u)
    throw std::runtime_error(labels_path + ": bad magic (want 0x00000801)");
  const std::uint32_t m = read_be32(lab, labels_path);
  if (m != n)
    throw std::runtime_error(labels_path + ": label count does not match image count");
  std::vector<int> y(m);
  for (std::uint32_t i = 0; i < m; ++i) {
    char c;
    if (!lab.get(c)) throw std::runtime_error(labels_path + ": truncated file");
    y[i] = static_cast<unsigned char>(c);
  }
  return {std::move(x), std::move(y)};
}

}  // namespace detail

// IDX image/label pair -> pixels in [0,1], flattened rows.
inline Dataset load_idx(const std::string& train_images, const std::string& train_labels,
                        const std::string& test_images = "", const std::string& test_labels = "") {
  Dataset ds;
  auto [x, y] = detail::load_idx_pair(train_images, train_labels);
  ds.train_inputs = std::move(x);
  ds.train_labels = std::move(y);
  if (!test_images.empty()) {
    auto [tx, ty] = detail::load_idx_pair(test_images, test_labels);
    ds.test_inputs = std::move(tx);
    ds.test_labels = std::move(ty);
  } else {
    ds.test_inputs = Matrix(0, ds.train_inputs.cols);
  }
  int cmax = 0;
  for (int v : ds.train_labels) cmax = std::max(cmax, v);
  for (int v : ds.test_labels) cmax = std::max(cmax, v);
  ds.class_count = static_cast<std::size_t>(cmax) + 1;
  ds.feature_stats.mean.assign(ds.train_inputs.cols, 0.0);
  ds.feature_stats.stddev.assign(ds.train_inputs.cols, 1.0);
  return ds;
}

// Keep a deterministic fraction of the train split (the FMNIST protocol uses
// a random 10% per seed). Test split is untouched.
inline void subsample_train(Dataset& ds, double fraction, std::uint64_t seed) {
  if (fraction >= 1.0) return;
  const std::size_t n = ds.train_inputs.rows;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0x5ab5u));
  rng.shuffle(idx);
  const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * n));
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  Matrix x(keep, ds.train_inputs.cols);
  std::vector<int> y(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    std::copy(ds.train_inputs.row(idx[i]), ds.train_inputs.row(idx[i]) + x.cols, x.row(i));
    y[i] = ds.train_labels[idx[i]];
  }
  ds.train_inputs = std::move(x);
  ds.train_labels = std::move(y);
}

// ---- synthetic generators -------------------------------------------------

// One client's quadratic loss 0.5 * ||A w - b||^2 with exact derivatives.
struct QuadraticClient {
  Matrix a;
  Vector b;

  std::size_t dim() const { return a.cols; }
  std::size_t size() const { return a.rows; }

  double value(const Vector& w) const {
    Vector r = matvec(a, w);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double d = r[i] - b[i];
      s += d * d;
    }
    return 0.5 * s;
  }
  Vector gradient(const Vector& w) const {
    Vector r = matvec(a, w);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
    return matvec_t(a, r);
  }
  // Full A^T A (dense, small P).
  Matrix hessian() const {
    Matrix h(a.cols, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double* row = a.row(i);
      for (std::size_t p = 0; p < a.cols; ++p)
        for (std::size_t q = 0; q < a.cols; ++q) h(p, q) += row[p] * row[q];
    }
    return h;
  }
  Vector hessian_diag() const {
    Vector h(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double* row = a.row(i);
      for (std::size_t p = 0; p < a.cols; ++p) h[p] += row[p] * row[p];
    }
    return h;
  }
};

// K random quadratic clients. With diagonal_design=true the columns of each
// A_k are axis-aligned so A_k^T A_k is exactly diagonal (used by the
// FedLap-Cov exact-curvature tests).
inline std::vector<QuadraticClient> make_quadratic_clients(std::size_t k, std::size_t dim,
                                                           std::size_t rows, std::uint64_t seed,
                                                           bool diagonal_design = false,
                                                           double scale = 1.0) {
  std::vector<QuadraticClient> out;
  Rng rng(derive_seed(seed, 0x4a2du));
  for (std::size_t c = 0; c < k; ++c) {
    QuadraticClient q;
    q.a = Matrix(rows, dim);
    q.b.assign(rows, 0.0);
    if (diagonal_design) {
      for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t j = i % dim;
        q.a(i, j) = scale * rng.uniform(0.5, 2.0);
      }
    } else {
      for (auto& v : q.a.data) v = scale * rng.normal();
    }
    for (auto& v : q.b) v = rng.normal();
    out.push_back(std::move(q));
  }
  return out;
}

// Closed-form minimizer of sum_k 0.5||A_k w - b_k||^2 + 0.5*delta*||w||^2.
inline Vector quadratic_global_optimum(const std::vector<QuadraticClient>& clients, double delta,
                                       bool mean_scaled = false) {
  if (clients.empty()) throw std::invalid_argument("no quadratic clients");
  const std::size_t p = clients[0].dim();
  Matrix h(p, p);
  Vector rhs(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) h(i, i) = delta;
  for (const auto& q : clients) {
    const double scale = mean_scaled ? 1.0 / static_cast<double>(q.size()) : 1.0;
    Matrix hq = q.hessian();
    for (std::size_t i = 0; i < p * p; ++i) h.data[i] += scale * hq.data[i];
    Vector atb = matvec_t(q.a, q.b);
    axpy(scale, atb, rhs);
  }
  return solve_dense(std::move(h), std::move(rhs));
}

struct BlobsSpec {
  std::size_t class_count = 2;
  std::size_t dim = 2;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  double separation = 4.0;  // distance between adjacent class means
  double noise = 1.0;       // isotropic standard deviation
};

// Well-separated Gaussian blobs, one mean per class on a seeded random
// direction grid. Produces a separable classification dataset.
inline Dataset generate_blobs(const BlobsSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xb10b5u));
  std::vector<Vector> means;
  for (std::size_t c = 0; c < spec.class_count; ++c) {
    Vector m(spec.dim, 0.0);
    for (auto& v : m) v = rng.normal();
    const double n = norm2(m);
    for (auto& v : m) v = v / (n > 0 ? n : 1.0) * spec.separation * (1.0 + static_cast<double>(c));
    means.push_back(std::move(m));
  }
  auto fill = [&](std::size_t per_class, Matrix& x, std::vector<int>& y) {
    x = Matrix(per_class * spec.class_count, spec.dim);
    y.resize(per_class * spec.class_count);
    std::size_t i = 0;
    for (std::size_t c = 0; c < spec.class_count; ++c) {
      for (std::size_t t = 0; t < per_class; ++t, ++i) {
        for (std::size_t j = 0; j < spec.dim; ++j)
          x(i, j) = means[c][j] + spec.noise * rng.normal();
        y[i] = static_cast<int>(c);
      }
    }
  };
  Dataset ds;
  ds.class_count = spec.class_count;
  fill(spec.train_per_class, ds.train_inputs, ds.train_labels);
  fill(spec.test_per_class, ds.test_inputs, ds.test_labels);
  ds.feature_stats.mean.assign(spec.dim, 0.0);
  ds.feature_stats.stddev.assign(spec.dim, 1.0);
  return ds;
}

}  // namespace fedlap
