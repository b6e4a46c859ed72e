#include "cdeshift/data.hpp"

#include "cdeshift/error.hpp"
#include "cdeshift/random.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cdeshift {

namespace {

std::vector<std::string> split_fields(const std::string& line)
{
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ','))
    out.push_back(field);
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

std::string trim(std::string s)
{
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_number(const std::string& text, std::size_t row, std::size_t col)
{
  const std::string t = trim(text);
  double value = 0.0;
  const auto* first = t.data();
  const auto* last = t.data() + t.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (t.empty() || ec != std::errc() || ptr != last)
    throw ParseError("row " + std::to_string(row) + ", column " + std::to_string(col + 1) +
                       ": cannot parse '" + t + "' as a number",
                     row);
  return value;
}

} // namespace

Sample::Sample(Eigen::MatrixXd covariates,
               std::vector<std::string> covariate_names,
               std::optional<Eigen::VectorXd> response,
               std::optional<std::vector<ColumnStats>> standardization,
               std::optional<ResponseRange> response_range)
  : covariates_(std::move(covariates))
  , names_(std::move(covariate_names))
  , response_(std::move(response))
  , standardization_(std::move(standardization))
  , response_range_(response_range)
{
  if (static_cast<Index>(names_.size()) != covariates_.cols())
    throw ValidationError("expected " + std::to_string(covariates_.cols()) +
                          " covariate names, got " + std::to_string(names_.size()));
  for (Index j = 0; j < covariates_.cols(); ++j)
    for (Index i = 0; i < covariates_.rows(); ++i)
      if (!std::isfinite(covariates_(i, j)))
        throw ValidationError("non-finite covariate at row " + std::to_string(i + 1) +
                              ", column '" + names_[j] + "'");
  if (response_) {
    if (response_->size() != covariates_.rows())
      throw ValidationError("response length does not match row count");
    for (Index i = 0; i < response_->size(); ++i) {
      const double z = (*response_)(i);
      if (!std::isfinite(z) || z < 0.0 || z > 1.0)
        throw ValidationError("response at row " + std::to_string(i + 1) +
                              " is outside [0,1]");
    }
  }
  if (standardization_) {
    if (static_cast<Index>(standardization_->size()) != covariates_.cols())
      throw ValidationError("standardization must have one entry per column");
    for (const auto& s : *standardization_)
      if (!(s.sd > 0.0) || !std::isfinite(s.mean) || !std::isfinite(s.sd))
        throw ValidationError("standardization requires finite mean and positive sd");
  }
  if (response_range_ && !(response_range_->min < response_range_->max))
    throw ValidationError("response range requires min < max");
}

const Eigen::VectorXd& Sample::response() const
{
  if (!response_)
    throw ValidationError("sample has no response column");
  return *response_;
}

Sample Sample::select_rows(const std::vector<Index>& rows) const
{
  Eigen::MatrixXd x(static_cast<Index>(rows.size()), cols());
  std::optional<Eigen::VectorXd> z;
  if (response_)
    z = Eigen::VectorXd(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index r = rows[k];
    if (r < 0 || r >= this->rows())
      throw std::out_of_range("row index out of range");
    x.row(static_cast<Index>(k)) = covariates_.row(r);
    if (z)
      (*z)(static_cast<Index>(k)) = (*response_)(r);
  }
  return Sample(std::move(x), names_, std::move(z), standardization_, response_range_);
}

Sample Sample::without_response() const
{
  return Sample(covariates_, names_, std::nullopt, standardization_, response_range_);
}

Sample Sample::with_response(Eigen::VectorXd response, std::optional<ResponseRange> range) const
{
  return Sample(covariates_, names_, std::move(response), standardization_,
                range ? range : response_range_);
}

Sample Sample::concat(const Sample& top, const Sample& bottom)
{
  if (top.names_ != bottom.names_)
    throw ValidationError("cannot concatenate samples with different columns");
  if (top.labeled() != bottom.labeled())
    throw ValidationError("cannot concatenate labeled and unlabeled samples");
  Eigen::MatrixXd x(top.rows() + bottom.rows(), top.cols());
  x << top.covariates_, bottom.covariates_;
  std::optional<Eigen::VectorXd> z;
  if (top.labeled()) {
    z = Eigen::VectorXd(x.rows());
    *z << *top.response_, *bottom.response_;
  }
  return Sample(std::move(x), top.names_, std::move(z), top.standardization_,
                top.response_range_);
}

std::optional<Index> Sample::column_index(const std::string& name) const
{
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end())
    return std::nullopt;
  return static_cast<Index>(it - names_.begin());
}

Sample read_table(std::istream& in, bool has_response)
{
  std::string line;
  if (!std::getline(in, line) || trim(line).empty())
    throw ParseError("empty table: missing header row", 0);
  std::vector<std::string> header = split_fields(line);
  for (auto& h : header)
    h = trim(h);
  const std::size_t width = header.size();
  if (has_response && width < 2)
    throw ParseError("a labeled table needs at least one covariate and a response", 0);

  std::vector<std::vector<double>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty())
      continue;
    ++row;
    const auto fields = split_fields(line);
    if (fields.size() != width)
      throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(width) +
                         " fields, found " + std::to_string(fields.size()),
                       row);
    std::vector<double> values(width);
    for (std::size_t c = 0; c < width; ++c) {
      values[c] = parse_number(fields[c], row, c);
      if (!std::isfinite(values[c]))
        throw ValidationError("non-finite value at row " + std::to_string(row) + ", column '" +
                              header[c] + "'");
    }
    rows.push_back(std::move(values));
  }

  const std::size_t d = has_response ? width - 1 : width;
  Eigen::MatrixXd x(static_cast<Index>(rows.size()), static_cast<Index>(d));
  Eigen::VectorXd z(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < d; ++c)
      x(static_cast<Index>(i), static_cast<Index>(c)) = rows[i][c];
    if (has_response)
      z(static_cast<Index>(i)) = rows[i][d];
  }
  header.resize(d);
  if (has_response)
    return Sample(std::move(x), std::move(header), std::move(z));
  return Sample(std::move(x), std::move(header));
}

Sample load_table(const std::string& path, bool has_response)
{
  std::ifstream in(path);
  if (!in)
    throw Error("cannot open '" + path + "'");
  return read_table(in, has_response);
}

void write_table(std::ostream& out,
                 const Sample& sample,
                 const std::vector<std::pair<std::string, Eigen::VectorXd>>& extra_columns)
{
  const auto& names = sample.covariate_names();
  bool first = true;
  const auto sep = [&]() -> std::ostream& {
    if (!first)
      out << ',';
    first = false;
    return out;
  };
  for (const auto& n : names)
    sep() << n;
  for (const auto& [n, _] : extra_columns)
    sep() << n;
  if (sample.labeled())
    sep() << "z";
  out << '\n';

  out << std::setprecision(12);
  for (Index i = 0; i < sample.rows(); ++i) {
    first = true;
    for (Index j = 0; j < sample.cols(); ++j)
      sep() << sample.covariates()(i, j);
    for (const auto& [_, col] : extra_columns)
      sep() << col(i);
    if (sample.labeled())
      sep() << sample.response()(i);
    out << '\n';
  }
}

void save_table(const std::string& path,
                const Sample& sample,
                const std::vector<std::pair<std::string, Eigen::VectorXd>>& extra_columns)
{
  std::ofstream out(path);
  if (!out)
    throw Error("cannot write '" + path + "'");
  write_table(out, sample, extra_columns);
}

Sample standardize(const Sample& sample, const std::optional<std::vector<ColumnStats>>& stats)
{
  const Index n = sample.rows();
  const Index d = sample.cols();
  std::vector<ColumnStats> used;
  if (stats) {
    if (static_cast<Index>(stats->size()) != d)
      throw ValidationError("standardization stats have " + std::to_string(stats->size()) +
                            " entries for " + std::to_string(d) + " columns");
    used = *stats;
  } else {
    if (n < 2)
      throw ValidationError("standardization needs at least two rows");
    used.resize(static_cast<std::size_t>(d));
    for (Index j = 0; j < d; ++j) {
      const auto col = sample.covariates().col(j);
      const double mean = col.mean();
      const double ss = (col.array() - mean).square().sum();
      const double sd = std::sqrt(ss / static_cast<double>(n - 1));
      if (!(sd > 0.0))
        throw ValidationError("column '" + sample.covariate_names()[j] +
                              "' has zero variance and cannot be standardized");
      used[static_cast<std::size_t>(j)] = { mean, sd };
    }
  }
  Eigen::MatrixXd x = sample.covariates();
  for (Index j = 0; j < d; ++j) {
    const auto& s = used[static_cast<std::size_t>(j)];
    x.col(j) = (x.col(j).array() - s.mean) / s.sd;
  }
  std::optional<Eigen::VectorXd> z;
  if (sample.labeled())
    z = sample.response();
  return Sample(std::move(x), sample.covariate_names(), std::move(z), std::move(used),
                sample.response_range());
}

RescaledResponse rescale_response(const Eigen::VectorXd& z_raw,
                                  const std::optional<ResponseRange>& range)
{
  ResponseRange r;
  if (range) {
    if (!(range->min < range->max))
      throw ValidationError("response range requires min < max");
    r = *range;
  } else {
    if (z_raw.size() == 0)
      throw ValidationError("cannot infer a response range from no values");
    r = { z_raw.minCoeff(), z_raw.maxCoeff() };
    if (!(r.min < r.max))
      throw ValidationError("constant response cannot be rescaled without an explicit range");
  }
  RescaledResponse out{ Eigen::VectorXd(z_raw.size()), r, 0 };
  const double width = r.max - r.min;
  for (Index i = 0; i < z_raw.size(); ++i) {
    if (!std::isfinite(z_raw(i)))
      throw ValidationError("non-finite response at row " + std::to_string(i + 1));
    double v = (z_raw(i) - r.min) / width;
    if (v < 0.0 || v > 1.0) {
      v = std::clamp(v, 0.0, 1.0);
      ++out.clipped;
    }
    out.z(i) = v;
  }
  return out;
}

Eigen::VectorXd inverse_rescale(const Eigen::VectorXd& z, const ResponseRange& range)
{
  return (z.array() * (range.max - range.min) + range.min).matrix();
}

void SplitSpec::validate() const
{
  for (double f : { train_fraction, validation_fraction, test_fraction })
    if (!(f > 0.0 && f < 1.0))
      throw ValidationError("split fractions must each lie in (0,1)");
  if (std::abs(train_fraction + validation_fraction + test_fraction - 1.0) > 1e-12)
    throw ValidationError("split fractions must sum to 1");
}

SplitIndices split_indices(Index n, const SplitSpec& spec)
{
  spec.validate();
  if (n < 3)
    throw ValidationError("splitting needs at least three rows");
  const auto n_train = static_cast<Index>(std::llround(spec.train_fraction * static_cast<double>(n)));
  const auto n_val =
    static_cast<Index>(std::llround(spec.validation_fraction * static_cast<double>(n)));
  const Index n_test = n - n_train - n_val;
  if (n_train <= 0 || n_val <= 0 || n_test <= 0)
    throw ValidationError("split of " + std::to_string(n) + " rows leaves an empty part");

  Rng rng = make_rng(spec.seed);
  const auto perm = shuffled_indices(static_cast<std::size_t>(n), rng);
  SplitIndices out;
  for (Index k = 0; k < n; ++k) {
    const auto r = static_cast<Index>(perm[static_cast<std::size_t>(k)]);
    if (k < n_train)
      out.train.push_back(r);
    else if (k < n_train + n_val)
      out.validation.push_back(r);
    else
      out.test.push_back(r);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

SplitSample split(const Sample& sample, const SplitSpec& spec)
{
  const auto idx = split_indices(sample.rows(), spec);
  return { sample.select_rows(idx.train), sample.select_rows(idx.validation),
           sample.select_rows(idx.test) };
}

} // namespace cdeshift
