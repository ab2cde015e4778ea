#pragma once

// Self-contained model container written by `tenma fit`:
//
//   tenma-model 1
//   family <token>
//   dispersion <number>
//   shape <p_1> ... <p_D>
//   ranks <r_1> ... <r_S>
//   table candidates <rows>        CSV header + one row per rank
//   table methods <rows>           CSV header + one row per method
//   block factor <s> <d> <bytes>   TNSR record, factor d of candidate s (1-based)
//   block estimate <bytes>         TNSR record, dense TRMA estimate
//   end
//
// Numbers in the text part are written in shortest round-trip form.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tenma/averaging.hpp"
#include "tenma/errors.hpp"
#include "tenma/text_io.hpp"
#include "tenma/tnsr_io.hpp"

namespace tenma {

inline constexpr int kModelFormatVersion = 1;

struct CandidateSummary {
  std::size_t rank = 0;
  double df = 0.0;
  double log_likelihood = 0.0;
  double aic = 0.0;
  double bic = 0.0;
};

struct MethodWeights {
  std::string method;
  std::optional<std::size_t> selected_rank;
  /// AIC/BIC of the selected candidate, CV criterion for TRMA, NaN otherwise.
  double criterion = std::numeric_limits<double>::quiet_NaN();
  /// Cross-validation criterion at these weights (comparable across methods).
  double cv_criterion = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> weights;
};

struct ModelFile {
  Family family;
  Shape shape;
  std::vector<std::size_t> ranks;
  std::vector<CandidateSummary> candidates;
  std::vector<MethodWeights> methods;
  std::vector<CpTensor> estimates;  // one per rank
  DenseTensor estimate;             // TRMA average

  [[nodiscard]] const MethodWeights& method(std::string_view name) const {
    for (const MethodWeights& m : methods)
      if (m.method == name) return m;
    throw InputError("model has no method '" + std::string(name) + "'");
  }

  /// Dense coefficient tensor for any stored method.
  [[nodiscard]] DenseTensor coefficient(std::string_view name = "TRMA") const {
    if (name == "TRMA") return estimate;
    const MethodWeights& m = method(name);
    return axpy_cp(m.weights, estimates);
  }
};

inline ModelFile make_model_file(const CandidateSet& cs, const RegressionData& data, const InformationCriteria& ic,
                                 const std::vector<MethodOutcome>& outcomes, const AveragedModel& trma) {
  ModelFile m;
  m.family = data.family;
  m.shape = data.shape();
  m.ranks = cs.ranks;
  for (std::size_t s = 0; s < cs.size(); ++s)
    m.candidates.push_back({cs.ranks[s], ic.df[s], ic.log_likelihood[s], ic.aic[s], ic.bic[s]});
  const SimplexObjective cv = cv_objective(cs, data);
  for (const MethodOutcome& o : outcomes) {
    MethodWeights w;
    w.method = std::string(method_name(o.method));
    w.selected_rank = o.selected_rank;
    w.criterion = o.criterion;
    w.cv_criterion = cv.value(o.weights.values());
    w.weights.assign(o.weights.values().data(), o.weights.values().data() + o.weights.size());
    m.methods.push_back(std::move(w));
  }
  m.estimates = cs.estimates();
  m.estimate = trma.estimate_dense;
  return m;
}

namespace detail {

inline std::string number_or_na(double v) { return std::isnan(v) ? "NA" : exact_number(v); }

inline double parse_number_or_na(std::string_view s, const std::string& where) {
  if (trim(s) == "NA") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  if (!parse_double(s, v)) throw InputError(where + ": not a number: '" + std::string(s) + "'");
  return v;
}

inline void write_block(std::ostream& os, const std::string& header, std::span<const std::size_t> dims,
                        std::span<const double> values) {
  std::ostringstream body;
  write_tnsr(body, dims, values);
  const std::string bytes = body.str();
  os << "block " << header << ' ' << bytes.size() << '\n';
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  os << '\n';
}

}  // namespace detail

inline void write_model(std::ostream& os, const ModelFile& m) {
  os << "tenma-model " << kModelFormatVersion << '\n';
  os << "family " << family_token(m.family.kind) << '\n';
  os << "dispersion " << exact_number(m.family.dispersion) << '\n';
  os << "shape";
  for (std::size_t p : m.shape.dims()) os << ' ' << p;
  os << "\nranks";
  for (std::size_t r : m.ranks) os << ' ' << r;
  os << "\ntable candidates " << m.candidates.size() << "\nrank,df,log_likelihood,aic,bic\n";
  for (const CandidateSummary& c : m.candidates)
    os << c.rank << ',' << exact_number(c.df) << ',' << exact_number(c.log_likelihood) << ','
       << exact_number(c.aic) << ',' << exact_number(c.bic) << '\n';
  os << "table methods " << m.methods.size() << "\nmethod,selected_rank,criterion,cv_criterion";
  for (std::size_t r : m.ranks) os << ",w_rank" << r;
  os << '\n';
  for (const MethodWeights& w : m.methods) {
    os << w.method << ',' << (w.selected_rank ? std::to_string(*w.selected_rank) : "NA") << ','
       << detail::number_or_na(w.criterion) << ',' << detail::number_or_na(w.cv_criterion);
    for (double v : w.weights) os << ',' << exact_number(v);
    os << '\n';
  }
  for (std::size_t s = 0; s < m.estimates.size(); ++s) {
    for (std::size_t d = 0; d < m.shape.order(); ++d) {
      const Matrix& f = m.estimates[s].factor(d);
      const std::size_t dims[] = {static_cast<std::size_t>(f.rows()), static_cast<std::size_t>(f.cols())};
      detail::write_block(os, "factor " + std::to_string(s + 1) + ' ' + std::to_string(d + 1), dims,
                          std::span<const double>(f.data(), static_cast<std::size_t>(f.size())));
    }
  }
  detail::write_block(os, "estimate", m.estimate.shape().dims(), m.estimate.values());
  os << "end\n";
  if (!os) throw InputError("failed writing model");
}

inline void write_model_file(const std::filesystem::path& path, const ModelFile& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot create " + path.string());
  write_model(os, m);
}

inline ModelFile read_model(std::istream& is, const std::string& source) {
  std::size_t line_no = 0;
  std::string line;
  const auto where = [&] { return source + ":" + std::to_string(line_no); };
  const auto next_line = [&]() -> std::string {
    if (!std::getline(is, line)) throw InputError(source + ": unexpected end of model file");
    ++line_no;
    return line;
  };
  const auto words = [](const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    for (std::string w; ss >> w;) out.push_back(w);
    return out;
  };
  const auto to_size = [&](const std::string& s) {
    double v = 0.0;
    if (!parse_double(s, v) || v < 0 || v != std::floor(v)) throw InputError(where() + ": bad integer '" + s + "'");
    return static_cast<std::size_t>(v);
  };
  const auto expect = [&](const std::string& key) {
    std::vector<std::string> w = words(next_line());
    if (w.empty() || w[0] != key) throw InputError(where() + ": expected '" + key + "'");
    w.erase(w.begin());
    return w;
  };

  ModelFile m;
  {
    const auto w = expect("tenma-model");
    if (w.size() != 1 || w[0] != std::to_string(kModelFormatVersion))
      throw InputError(where() + ": unsupported model format version");
  }
  {
    const auto w = expect("family");
    if (w.size() != 1) throw InputError(where() + ": expected one family token");
    m.family = make_family(parse_family_kind(w[0]));
  }
  {
    const auto w = expect("dispersion");
    if (w.size() != 1) throw InputError(where() + ": expected one dispersion value");
    m.family = m.family.with_dispersion(detail::parse_number_or_na(w[0], where()));
  }
  {
    std::vector<std::size_t> dims;
    for (const std::string& s : expect("shape")) dims.push_back(to_size(s));
    m.shape = Shape(std::move(dims));
  }
  for (const std::string& s : expect("ranks")) m.ranks.push_back(to_size(s));
  validate_ranks(m.ranks);
  const std::size_t S = m.ranks.size();

  const auto table = [&](const std::string& name) {
    const auto w = expect("table");
    if (w.size() != 2 || w[0] != name) throw InputError(where() + ": expected table " + name);
    const std::size_t rows = to_size(w[1]);
    next_line();  // header
    std::vector<std::vector<std::string>> out;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::string row = next_line();
      std::vector<std::string> cells;
      for (std::string_view c : split_commas(row)) cells.emplace_back(c);
      out.push_back(std::move(cells));
    }
    return out;
  };
  for (const auto& row : table("candidates")) {
    if (row.size() != 5) throw InputError(where() + ": candidate row needs 5 fields");
    m.candidates.push_back({to_size(row[0]), detail::parse_number_or_na(row[1], where()),
                            detail::parse_number_or_na(row[2], where()), detail::parse_number_or_na(row[3], where()),
                            detail::parse_number_or_na(row[4], where())});
  }
  for (const auto& row : table("methods")) {
    if (row.size() != 4 + S) throw InputError(where() + ": method row needs " + std::to_string(4 + S) + " fields");
    MethodWeights w;
    w.method = row[0];
    if (row[1] != "NA") w.selected_rank = to_size(row[1]);
    w.criterion = detail::parse_number_or_na(row[2], where());
    w.cv_criterion = detail::parse_number_or_na(row[3], where());
    for (std::size_t s = 0; s < S; ++s) w.weights.push_back(detail::parse_number_or_na(row[4 + s], where()));
    static_cast<void>(WeightVector(Eigen::Map<const Vector>(w.weights.data(), static_cast<Eigen::Index>(S))));
    m.methods.push_back(std::move(w));
  }

  const auto block = [&](const std::vector<std::string>& expected_tail) {
    auto w = expect("block");
    if (w.size() != expected_tail.size() + 1 || !std::equal(expected_tail.begin(), expected_tail.end(), w.begin()))
      throw InputError(where() + ": unexpected block header");
    const std::size_t bytes = to_size(w.back());
    std::string body(bytes, '\0');
    is.read(body.data(), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(is.gcount()) != bytes)
      throw InputError(where() + ": block truncated: expected " + std::to_string(bytes) + " bytes, found " +
                       std::to_string(is.gcount()));
    std::istringstream bs(body);
    RawTensor raw = read_tnsr(bs, where());
    if (is.get() != '\n') throw InputError(where() + ": missing newline after block");
    return raw;
  };
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<Matrix> factors;
    for (std::size_t d = 0; d < m.shape.order(); ++d) {
      RawTensor raw = block({"factor", std::to_string(s + 1), std::to_string(d + 1)});
      if (raw.dims.size() != 2 || raw.dims[0] != m.shape.dim(d) || raw.dims[1] != m.ranks[s])
        throw InputError(where() + ": factor block has wrong dimensions");
      factors.push_back(Eigen::Map<const Matrix>(raw.values.data(), static_cast<Eigen::Index>(raw.dims[0]),
                                                 static_cast<Eigen::Index>(raw.dims[1])));
    }
    m.estimates.emplace_back(m.shape, std::move(factors));
  }
  {
    RawTensor raw = block({"estimate"});
    if (raw.dims != m.shape.dims()) throw InputError(where() + ": estimate block has wrong shape");
    m.estimate = DenseTensor(m.shape, std::move(raw.values));
  }
  expect("end");
  return m;
}

inline ModelFile read_model_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open model " + path.string());
  return read_model(is, path.string());
}

}  // namespace tenma
