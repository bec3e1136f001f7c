#include "nckd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "nckd/error.hpp"
#include "nckd/geometry.hpp"
#include "nckd/io.hpp"

namespace nckd {

Dataset Dataset::make(Matrix features, std::vector<std::size_t> labels, std::size_t k) {
  if (features.rows() != labels.size())
    throw ContractViolation("Dataset: feature rows and labels differ in count");
  if (!all_finite(features.flat())) throw ContractViolation("Dataset: non-finite feature");
  Dataset d;
  d.k = k;
  d.counts.assign(k, 0);
  for (std::size_t y : labels) {
    if (y >= k) throw ContractViolation("Dataset: label out of range");
    ++d.counts[y];
  }
  d.balanced = std::all_of(d.counts.begin(), d.counts.end(),
                           [&](std::size_t n) { return n == d.counts.front(); });
  d.features = std::move(features);
  d.labels = std::move(labels);
  return d;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Matrix f(indices.size(), dim());
  std::vector<std::size_t> y(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = features.row(indices[i]);
    std::copy(src.begin(), src.end(), f.row(i).begin());
    y[i] = labels[indices[i]];
  }
  return make(std::move(f), std::move(y), k);
}

void MixtureSpec::validate() const {
  if (k < 2) throw ContractViolation("MixtureSpec: need at least two classes");
  if (d == 0 || n_per_class == 0) throw ContractViolation("MixtureSpec: empty dimensions");
  if (!(center_separation > 0.0)) throw ContractViolation("MixtureSpec: separation must be positive");
  if (!(within_class_std >= 0.0)) throw ContractViolation("MixtureSpec: std must be nonnegative");
  if (placement == CenterPlacement::Etf && d + 1 < k)
    throw ContractViolation("MixtureSpec: ETF placement needs d >= k - 1");
  if (placement == CenterPlacement::RandomOrthogonal && d < k)
    throw ContractViolation("MixtureSpec: orthogonal placement needs d >= k");
}

Matrix mixture_centers(const MixtureSpec& spec, Rng& rng) {
  spec.validate();
  Matrix centers;
  if (spec.placement == CenterPlacement::Etf) {
    centers = make_simplex_etf(spec.k, spec.d, rng);
  } else {
    // Orthonormal rows: Gram–Schmidt on Gaussian draws.
    centers = Matrix(spec.k, spec.d);
    for (std::size_t c = 0; c < spec.k; ++c) {
      auto row = centers.row(c);
      double len = 0.0;
      while (!(len > 1e-8)) {
        for (double& v : row) v = rng.gaussian();
        for (int pass = 0; pass < 2; ++pass) {
          for (std::size_t p = 0; p < c; ++p) {
            const double proj = dot(row, centers.row(p));
            const auto prev = centers.row(p);
            for (std::size_t j = 0; j < spec.d; ++j) row[j] -= proj * prev[j];
          }
        }
        len = norm(row);
      }
      for (double& v : row) v /= len;
    }
  }
  for (double& v : centers.flat()) v *= spec.center_separation;
  return centers;
}

Dataset gaussian_mixture(const MixtureSpec& spec, Rng& rng) {
  Rng center_rng = rng.split("centers");
  Rng noise_rng = rng.split("noise");
  const Matrix centers = mixture_centers(spec, center_rng);
  const std::size_t n = spec.k * spec.n_per_class;
  Matrix f(n, spec.d);
  std::vector<std::size_t> y(n);
  for (std::size_t c = 0; c < spec.k; ++c) {
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      const std::size_t r = c * spec.n_per_class + i;
      y[r] = c;
      auto row = f.row(r);
      for (std::size_t j = 0; j < spec.d; ++j)
        row[j] = centers(c, j) + spec.within_class_std * noise_rng.gaussian();
    }
  }
  return Dataset::make(std::move(f), std::move(y), spec.k);
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                      : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Dataset parse_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t arity = 0;
  std::vector<double> values;
  std::vector<std::size_t> labels;
  auto fail = [&](const std::string& why) {
    throw ParseError(line_no, source + ":" + std::to_string(line_no) + ": " + why);
  };

  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (line_no == 1) {
      const auto header = split_fields(view);
      if (header.size() < 2 || trim(header[0]) != "label")
        fail("header must be label,f0,f1,...");
      arity = header.size();
      continue;
    }
    if (view.empty()) continue;
    const auto fields = split_fields(view);
    if (fields.size() != arity)
      fail("expected " + std::to_string(arity) + " fields, found " + std::to_string(fields.size()));
    const auto label_text = trim(fields[0]);
    long long label = -1;
    const auto [lp, lec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (lec != std::errc() || lp != label_text.data() + label_text.size())
      fail("label '" + std::string(label_text) + "' is not an integer");
    if (label < 0) fail("negative label");
    labels.push_back(static_cast<std::size_t>(label));
    for (std::size_t j = 1; j < fields.size(); ++j) {
      const auto cell = trim(fields[j]);
      double v = 0.0;
      const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size() || !std::isfinite(v))
        fail("cell '" + std::string(cell) + "' is not a finite number");
      values.push_back(v);
    }
  }
  if (line_no == 0) throw ParseError(0, source + ": empty file");
  if (labels.empty()) throw ParseError(line_no, source + ": no data rows");

  const std::size_t d = arity - 1;
  Matrix f(labels.size(), d);
  std::copy(values.begin(), values.end(), f.flat().begin());
  const std::size_t k = *std::max_element(labels.begin(), labels.end()) + 1;
  return Dataset::make(std::move(f), std::move(labels), k);
}

Dataset load_csv(const std::string& path) { return parse_csv(read_text(path), path); }

std::string to_csv(const Dataset& d) {
  std::string out = "label";
  for (std::size_t j = 0; j < d.dim(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  char buf[32];
  for (std::size_t i = 0; i < d.size(); ++i) {
    out += std::to_string(d.labels[i]);
    for (double v : d.features.row(i)) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void save_csv(const std::string& path, const Dataset& d) { write_text(path, to_csv(d)); }

Split split(const Dataset& d, double test_fraction, Rng& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ContractViolation("split: test_fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> members(d.k);
  for (std::size_t i = 0; i < d.size(); ++i) members[d.labels[i]].push_back(i);

  std::vector<bool> to_test(d.size(), false);
  for (std::size_t c = 0; c < d.k; ++c) {
    const auto& idx = members[c];
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    if (n_test == 0 || n_test >= idx.size())
      throw ContractViolation("split: class " + std::to_string(c) + " would leave an empty side");
    Rng class_rng = rng.split(static_cast<std::uint64_t>(c));
    const auto perm = permutation(class_rng, idx.size());
    for (std::size_t t = 0; t < n_test; ++t) to_test[idx[perm[t]]] = true;
  }
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < d.size(); ++i) (to_test[i] ? test_idx : train_idx).push_back(i);
  return {d.subset(train_idx), d.subset(test_idx)};
}

std::vector<std::vector<std::size_t>> batches(const Dataset& d, std::size_t batch_size, Rng& rng,
                                              bool shuffle) {
  if (batch_size == 0) throw ContractViolation("batches: batch_size must be at least 1");
  std::vector<std::size_t> order;
  if (shuffle) {
    order = permutation(rng, d.size());
  } else {
    order.resize(d.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace nckd
