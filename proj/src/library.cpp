#include "phmix/library.hpp"

#include <cmath>
#include <sstream>

#include "phmix/error.hpp"

namespace phmix {

namespace {

double factor_value(const BasisFactor& f, double x) {
  switch (f.kind) {
    case BasisFactor::Kind::kSin: return std::sin(x);
    case BasisFactor::Kind::kCos: return std::cos(x);
    case BasisFactor::Kind::kPower: return std::pow(x, f.power);
  }
  return 0.0;
}

double factor_derivative(const BasisFactor& f, double x) {
  switch (f.kind) {
    case BasisFactor::Kind::kSin: return std::cos(x);
    case BasisFactor::Kind::kCos: return -std::sin(x);
    case BasisFactor::Kind::kPower:
      return f.power == 0 ? 0.0 : f.power * std::pow(x, f.power - 1);
  }
  return 0.0;
}

int coord_index(const std::vector<std::string>& names, const std::string& name, const std::string& id) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown coordinate '" + name + "' in basis '" + id + "'");
}

BasisFactor parse_factor(const std::string& token, const std::vector<std::string>& names,
                         const std::string& id) {
  BasisFactor f;
  for (const auto& [prefix, kind] : {std::pair{std::string("sin("), BasisFactor::Kind::kSin},
                                     std::pair{std::string("cos("), BasisFactor::Kind::kCos}}) {
    if (token.rfind(prefix, 0) == 0 && token.back() == ')') {
      f.kind = kind;
      f.coord = coord_index(names, token.substr(4, token.size() - 5), id);
      return f;
    }
  }
  const auto caret = token.find('^');
  f.kind = BasisFactor::Kind::kPower;
  f.coord = coord_index(names, token.substr(0, caret), id);
  if (caret != std::string::npos) {
    const std::string digits = token.substr(caret + 1);
    require(!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos,
            ErrorCode::kInvalidArgument, "bad exponent in basis '" + id + "'");
    f.power = std::stoi(digits);
  }
  require(f.power >= 1, ErrorCode::kInvalidArgument, "non-positive power in basis '" + id + "'");
  return f;
}

}  // namespace

double BasisTerm::value(const Eigen::VectorXd& z) const {
  double v = 1.0;
  for (const auto& f : factors_) v *= factor_value(f, z(f.coord));
  return v;
}

Eigen::VectorXd BasisTerm::gradient(const Eigen::VectorXd& z) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(z.size());
  for (std::size_t k = 0; k < factors_.size(); ++k) {
    double partial = factor_derivative(factors_[k], z(factors_[k].coord));
    for (std::size_t other = 0; other < factors_.size(); ++other) {
      if (other != k) partial *= factor_value(factors_[other], z(factors_[other].coord));
    }
    g(factors_[k].coord) += partial;
  }
  return g;
}

Library::Library(std::vector<std::string> coord_names, const std::vector<std::string>& term_ids)
    : coord_names_(std::move(coord_names)) {
  for (const auto& id : term_ids) {
    std::vector<BasisFactor> factors;
    if (id != "1") {
      std::stringstream ss(id);
      std::string token;
      while (std::getline(ss, token, '*')) factors.push_back(parse_factor(token, coord_names_, id));
    }
    terms_.emplace_back(id, std::move(factors));
  }
}

int Library::index_of(const std::string& id) const {
  for (std::size_t j = 0; j < terms_.size(); ++j) {
    if (terms_[j].id() == id) return static_cast<int>(j);
  }
  throw Error(ErrorCode::kInvalidArgument, "basis '" + id + "' not in library");
}

Eigen::VectorXd Library::values(const Eigen::VectorXd& z) const {
  Eigen::VectorXd v(size());
  for (int j = 0; j < size(); ++j) v(j) = terms_[static_cast<std::size_t>(j)].value(z);
  return v;
}

Eigen::MatrixXd Library::gradients(const Eigen::VectorXd& z) const {
  Eigen::MatrixXd g(size(), z.size());
  for (int j = 0; j < size(); ++j) g.row(j) = terms_[static_cast<std::size_t>(j)].gradient(z).transpose();
  return g;
}

double Library::hamiltonian(const Eigen::VectorXd& xi, const Eigen::VectorXd& z) const {
  return values(z).dot(xi);
}

Eigen::VectorXd Library::hamiltonian_gradient(const Eigen::VectorXd& xi, const Eigen::VectorXd& z) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(z.size());
  for (int j = 0; j < size(); ++j) {
    if (xi(j) != 0.0) g += xi(j) * terms_[static_cast<std::size_t>(j)].gradient(z);
  }
  return g;
}

LibraryEvaluation build_library(const Eigen::MatrixXd& states, const Library& library) {
  require(states.cols() == library.dim(), ErrorCode::kDimensionMismatch,
          "state dimension does not match library");
  LibraryEvaluation out;
  out.theta.resize(states.rows(), library.size());
  out.gradients.reserve(static_cast<std::size_t>(states.rows()));
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const Eigen::VectorXd z = states.row(i).transpose();
    require(z.allFinite(), ErrorCode::kInvalidArgument, "non-finite state in build_library");
    out.theta.row(i) = library.values(z).transpose();
    out.gradients.push_back(library.gradients(z));
  }
  return out;
}

}  // namespace phmix
