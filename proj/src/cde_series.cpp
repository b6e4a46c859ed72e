#include "cdeshift/cde_series.hpp"

#include "cdeshift/error.hpp"
#include "cdeshift/neighbors.hpp"
#include "cdeshift/parallel.hpp"
#include "json_util.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>

namespace cdeshift {

namespace {

std::atomic<std::size_t> g_decompositions{ 0 };

constexpr double kEigenFloor = 1e-10;

Eigen::MatrixXd basis_matrix(ResponseBasis basis, Index I, std::size_t grid_size)
{
  Eigen::MatrixXd out(static_cast<Index>(grid_size), I);
  for (std::size_t g = 0; g < grid_size; ++g)
    for (Index i = 0; i < I; ++i)
      out(static_cast<Index>(g), i) = basis_value(basis, i + 1, grid_knot(g, grid_size));
  return out;
}

Eigen::VectorXd kernel_row(const Eigen::MatrixXd& train, const Eigen::VectorXd& q, double epsilon)
{
  return (-squared_distances(train, q).array() / (4.0 * epsilon)).exp().matrix();
}

void check_basis_index(Index i)
{
  if (i < 1)
    throw ValidationError("basis index starts at 1");
}

} // namespace

std::string to_string(ResponseBasis b)
{
  return b == ResponseBasis::cosine ? "cosine" : "fourier";
}

ResponseBasis response_basis_from_string(const std::string& s)
{
  if (s == "cosine")
    return ResponseBasis::cosine;
  if (s == "fourier")
    return ResponseBasis::fourier;
  throw ValidationError("unknown response basis '" + s + "'");
}

double basis_value(ResponseBasis basis, Index i, double z)
{
  check_basis_index(i);
  if (i == 1)
    return 1.0;
  const double pi = std::numbers::pi;
  if (basis == ResponseBasis::cosine)
    return std::numbers::sqrt2 * std::cos(pi * static_cast<double>(i - 1) * z);
  const double k = static_cast<double>(i / 2);
  return i % 2 == 0 ? std::numbers::sqrt2 * std::sin(2.0 * pi * k * z)
                    : std::numbers::sqrt2 * std::cos(2.0 * pi * k * z);
}

GramDecomposition decompose_gram(const Eigen::MatrixXd& x, double epsilon)
{
  if (!(epsilon > 0.0))
    throw ValidationError("kernel bandwidth epsilon must be positive");
  const Index n = x.rows();
  if (n == 0)
    throw ValidationError("series estimator needs training rows");
  Eigen::MatrixXd gram(n, n);
  for (Index i = 0; i < n; ++i) {
    gram(i, i) = 1.0;
    for (Index j = 0; j < i; ++j) {
      const double v = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / (4.0 * epsilon));
      gram(i, j) = v;
      gram(j, i) = v;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
  if (solver.info() != Eigen::Success)
    throw StageError("cde_series", "Gram eigendecomposition failed");
  ++g_decompositions;

  // Eigen returns ascending order.
  const Eigen::VectorXd& vals = solver.eigenvalues();
  const double top = vals(n - 1);
  Index rank = 0;
  while (rank < n && vals(n - 1 - rank) > kEigenFloor * top)
    ++rank;

  GramDecomposition out;
  out.epsilon = epsilon;
  out.eigvals.resize(rank);
  out.eigvecs.resize(n, rank);
  for (Index j = 0; j < rank; ++j) {
    out.eigvals(j) = vals(n - 1 - j);
    Eigen::VectorXd v = solver.eigenvectors().col(n - 1 - j);
    Index arg = 0;
    for (Index k = 1; k < n; ++k)
      if (std::abs(v(k)) > std::abs(v(arg)))
        arg = k;
    if (v(arg) < 0.0)
      v = -v;
    out.eigvecs.col(j) = v;
  }
  return out;
}

std::size_t gram_decomposition_count()
{
  return g_decompositions.load();
}

Eigen::MatrixXd series_coefficients(const Eigen::VectorXd& z,
                                    const Eigen::MatrixXd& eigvecs,
                                    Index I,
                                    ResponseBasis basis)
{
  if (I < 1)
    throw ValidationError("number of response basis functions I must be at least 1");
  const Index n = eigvecs.rows();
  if (z.size() != n)
    throw ValidationError("responses and eigenvectors differ in length");
  Eigen::MatrixXd phi(n, I);
  for (Index k = 0; k < n; ++k)
    for (Index i = 0; i < I; ++i)
      phi(k, i) = basis_value(basis, i + 1, z(k));
  const double sn = std::sqrt(static_cast<double>(n));
  return phi.transpose() * (sn * eigvecs) / static_cast<double>(n);
}

SeriesModel::SeriesModel(Eigen::MatrixXd train_x,
                         double epsilon,
                         Eigen::MatrixXd eigvecs,
                         Eigen::VectorXd eigvals,
                         Eigen::MatrixXd coeffs,
                         std::vector<Index> covariate_subset,
                         Index input_dimension,
                         ResponseBasis basis,
                         std::size_t grid_size)
  : train_x_(std::move(train_x))
  , epsilon_(epsilon)
  , eigvecs_(std::move(eigvecs))
  , eigvals_(std::move(eigvals))
  , coeffs_(std::move(coeffs))
  , subset_(std::move(covariate_subset))
  , input_dim_(input_dimension)
  , basis_(basis)
  , grid_size_(grid_size)
{
  if (!(epsilon_ > 0.0))
    throw ValidationError("kernel bandwidth epsilon must be positive");
  if (grid_size_ < 2)
    throw ValidationError("grid needs at least two knots");
  const Index J = eigvals_.size();
  if (J < 1 || eigvecs_.cols() != J || eigvecs_.rows() != train_x_.rows() || coeffs_.cols() != J)
    throw ValidationError("series model has inconsistent eigenvector, eigenvalue and coefficient shapes");
  if (coeffs_.rows() < 1)
    throw ValidationError("number of response basis functions I must be at least 1");
  if ((eigvals_.array() <= 0.0).any())
    throw ValidationError("retained eigenvalues must be positive");
  check_subset(subset_, input_dim_);
  if (static_cast<Index>(subset_.size()) != train_x_.cols())
    throw ValidationError("covariate subset does not match the training matrix");
  basis_grid_ = basis_matrix(basis_, coeffs_.rows(), grid_size_);
}

SeriesModel SeriesModel::from_decomposition(const Sample& labeled_train,
                                            const GramDecomposition& gram,
                                            Index I,
                                            Index J,
                                            std::vector<Index> subset,
                                            ResponseBasis basis,
                                            std::size_t grid_size)
{
  if (subset.empty())
    subset = all_columns(labeled_train.cols());
  check_subset(subset, labeled_train.cols());
  if (J < 1)
    throw ValidationError("number of eigenfunctions J must be at least 1");
  if (J > gram.usable_rank())
    throw ValidationError("J = " + std::to_string(J) + " exceeds the usable rank " +
                          std::to_string(gram.usable_rank()) + " of the Gram matrix");
  if (gram.eigvecs.rows() != labeled_train.rows())
    throw ValidationError("decomposition does not match the training sample");
  Eigen::MatrixXd vecs = gram.eigvecs.leftCols(J);
  Eigen::MatrixXd coeffs = series_coefficients(labeled_train.response(), vecs, I, basis);
  Eigen::MatrixXd train_x = select_columns(labeled_train.covariates(), subset);
  return SeriesModel(std::move(train_x), gram.epsilon,
                     std::move(vecs), gram.eigvals.head(J), std::move(coeffs), std::move(subset),
                     labeled_train.cols(), basis, grid_size);
}

SeriesModel SeriesModel::fit(const Sample& labeled_train,
                             double epsilon,
                             Index I,
                             Index J,
                             std::vector<Index> subset,
                             ResponseBasis basis,
                             std::size_t grid_size)
{
  if (subset.empty())
    subset = all_columns(labeled_train.cols());
  check_subset(subset, labeled_train.cols());
  if (J < 1 || J > labeled_train.rows())
    throw ValidationError("number of eigenfunctions J must lie in [1, n_L]");
  const auto gram = decompose_gram(select_columns(labeled_train.covariates(), subset), epsilon);
  return from_decomposition(labeled_train, gram, I, J, std::move(subset), basis, grid_size);
}

Eigen::VectorXd SeriesModel::nystrom(const Eigen::VectorXd& x) const
{
  if (x.size() != input_dim_)
    throw ValidationError("query has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(input_dim_));
  const Eigen::VectorXd k = kernel_row(train_x_, select_entries(x, subset_), epsilon_);
  const double sn = std::sqrt(static_cast<double>(train_x_.rows()));
  return sn * (eigvecs_.transpose() * k).cwiseQuotient(eigvals_);
}

DensityGrid SeriesModel::predict(const Eigen::VectorXd& x) const
{
  const Eigen::VectorXd a = coeffs_ * nystrom(x);
  const Eigen::VectorXd raw = basis_grid_ * a;
  return normalize(std::vector<double>(raw.data(), raw.data() + raw.size()));
}

nlohmann::json SeriesModel::to_json() const
{
  return { { "kind", kind() },
           { "I", I() },
           { "J", J() },
           { "epsilon", epsilon_ },
           { "basis", to_string(basis_) },
           { "covariate_subset", subset_ },
           { "input_dimension", input_dim_ },
           { "grid_size", grid_size_ },
           { "eigenvalues", detail::vector_to_json(eigvals_) },
           { "eigenvectors", detail::matrix_to_json(eigvecs_) },
           { "coefficients", detail::matrix_to_json(coeffs_) },
           { "train_x", detail::matrix_to_json(train_x_) } };
}

SeriesModel SeriesModel::from_json(const nlohmann::json& j)
{
  const auto subset = j.at("covariate_subset").get<std::vector<Index>>();
  const Index J = j.at("J").get<Index>();
  return SeriesModel(detail::matrix_from_json(j.at("train_x"), static_cast<Index>(subset.size())),
                     j.at("epsilon").get<double>(),
                     detail::matrix_from_json(j.at("eigenvectors"), J),
                     detail::vector_from_json(j.at("eigenvalues")),
                     detail::matrix_from_json(j.at("coefficients"), J), subset,
                     j.at("input_dimension").get<Index>(),
                     response_basis_from_string(j.at("basis").get<std::string>()),
                     j.at("grid_size").get<std::size_t>());
}

double extrapolation_fraction(const SeriesModel& model, const Eigen::MatrixXd& queries, double threshold)
{
  if (queries.rows() == 0)
    throw ValidationError("extrapolation diagnostic needs query rows");
  const double cut = threshold * std::sqrt(static_cast<double>(model.J()));
  std::vector<char> small(static_cast<std::size_t>(queries.rows()), 0);
  parallel_for(small.size(), [&](std::size_t i) {
    small[i] = model.nystrom(queries.row(static_cast<Index>(i)).transpose()).norm() < cut;
  });
  return static_cast<double>(std::count(small.begin(), small.end(), 1)) /
         static_cast<double>(small.size());
}

SeriesFit tune_series(const Sample& labeled_train,
                      const SeriesGrid& grid,
                      const Sample& labeled_val,
                      const Eigen::VectorXd& val_weights,
                      const Sample& unlabeled_val,
                      LossVariant loss_variant,
                      std::vector<Index> subset,
                      ResponseBasis basis,
                      std::size_t grid_size)
{
  auto Is = grid.I;
  auto Js = grid.J;
  auto eps = grid.epsilons;
  std::sort(Is.begin(), Is.end());
  Is.erase(std::unique(Is.begin(), Is.end()), Is.end());
  std::sort(Js.begin(), Js.end());
  Js.erase(std::unique(Js.begin(), Js.end()), Js.end());
  std::sort(eps.begin(), eps.end(), std::greater<>());
  eps.erase(std::unique(eps.begin(), eps.end()), eps.end());
  if (Is.empty() || Js.empty() || eps.empty())
    throw ValidationError("series tuning grids must be nonempty");
  if (Is.front() < 1 || Js.front() < 1)
    throw ValidationError("I and J must be at least 1");
  if (subset.empty())
    subset = all_columns(labeled_train.cols());
  check_subset(subset, labeled_train.cols());

  const Sample* sq_set = nullptr;
  const Sample* fit_set = nullptr;
  switch (loss_variant) {
    case LossVariant::labeled_only: sq_set = fit_set = &labeled_val; break;
    case LossVariant::shift_corrected: sq_set = &unlabeled_val; fit_set = &labeled_val; break;
    case LossVariant::oracle: sq_set = fit_set = &unlabeled_val; break;
  }
  if (!fit_set->labeled())
    throw ValidationError("validation sample for the fit term has no responses");
  if (sq_set->rows() == 0 || fit_set->rows() == 0)
    throw ValidationError("validation sets must be nonempty");
  const bool corrected = loss_variant == LossVariant::shift_corrected;
  if (corrected && val_weights.size() != labeled_val.rows())
    throw ValidationError("validation weights do not match the labeled validation sample");
  const bool paired = sq_set == fit_set;

  const Eigen::MatrixXd train_x = select_columns(labeled_train.covariates(), subset);
  const Index max_I = Is.back();

  struct Candidate
  {
    Index I, J;
    std::size_t eps_rank;
    double loss;
  };
  std::vector<Candidate> candidates;
  std::vector<SeriesTuningRow> table;
  std::vector<GramDecomposition> grams;

  for (std::size_t e = 0; e < eps.size(); ++e) {
    grams.push_back(decompose_gram(train_x, eps[e]));
    const auto& gram = grams.back();
    std::vector<Index> js;
    for (Index j : Js)
      if (j <= gram.usable_rank())
        js.push_back(j);
    if (js.empty())
      continue;
    const SeriesModel full = SeriesModel::from_decomposition(labeled_train, gram, max_I, js.back(),
                                                             subset, basis, grid_size);
    const Eigen::MatrixXd phi = basis_matrix(basis, max_I, grid_size);

    std::vector<LossTerms> terms(js.size() * Is.size());
    for (auto& t : terms) {
      t.squared.resize(static_cast<std::size_t>(sq_set->rows()));
      t.fit.resize(static_cast<std::size_t>(fit_set->rows()));
      t.paired = paired;
    }
    const auto evaluate_queries = [&](const Sample& set, bool want_sq, bool want_fit) {
      parallel_for(static_cast<std::size_t>(set.rows()), [&](std::size_t q) {
        const auto qi = static_cast<Index>(q);
        const Eigen::VectorXd psi = full.nystrom(set.row(qi));
        const double zq = want_fit ? set.response()(qi) : 0.0;
        const double wq = want_fit && corrected ? val_weights(qi) : 1.0;
        for (std::size_t jj = 0; jj < js.size(); ++jj) {
          const Eigen::VectorXd a = full.coeffs().leftCols(js[jj]) * psi.head(js[jj]);
          for (std::size_t ii = 0; ii < Is.size(); ++ii) {
            const Eigen::VectorXd raw = phi.leftCols(Is[ii]) * a.head(Is[ii]);
            const DensityGrid d = normalize(std::vector<double>(raw.data(), raw.data() + raw.size()));
            auto& t = terms[jj * Is.size() + ii];
            if (want_sq)
              t.squared[q] = squared_integral(d);
            if (want_fit)
              t.fit[q] = evaluate(d, zq) * wq;
          }
        }
      });
    };
    if (paired) {
      evaluate_queries(*sq_set, true, true);
    } else {
      evaluate_queries(*sq_set, true, false);
      evaluate_queries(*fit_set, false, true);
    }
    for (std::size_t jj = 0; jj < js.size(); ++jj)
      for (std::size_t ii = 0; ii < Is.size(); ++ii) {
        const double loss = terms[jj * Is.size() + ii].value();
        candidates.push_back({ Is[ii], js[jj], e, loss });
        table.push_back({ Is[ii], js[jj], eps[e], loss });
      }
  }
  if (candidates.empty())
    throw ValidationError("every J in the grid exceeds the usable Gram rank");

  // Order by (I, J, epsilon descending) and keep the first strict minimum.
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.I != b.I)
      return a.I < b.I;
    if (a.J != b.J)
      return a.J < b.J;
    return a.eps_rank < b.eps_rank;
  });
  const Candidate* best = &candidates.front();
  for (const auto& c : candidates)
    if (c.loss < best->loss)
      best = &c;
  return SeriesFit{ SeriesModel::from_decomposition(labeled_train, grams[best->eps_rank], best->I,
                                                    best->J, subset, basis, grid_size),
                    std::move(table), best->loss };
}

} // namespace cdeshift
