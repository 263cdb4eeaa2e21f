#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace phmix {

/// One factor of a basis product: z_c^power, sin(z_c) or cos(z_c).
struct BasisFactor {
  enum class Kind { kPower, kSin, kCos };
  Kind kind = Kind::kPower;
  int coord = 0;
  int power = 1;
};

/// A candidate Hamiltonian term Theta_j(z): a product of factors (the empty
/// product is the constant basis).
class BasisTerm {
 public:
  BasisTerm() = default;
  BasisTerm(std::string id, std::vector<BasisFactor> factors)
      : id_(std::move(id)), factors_(std::move(factors)) {}

  const std::string& id() const { return id_; }
  const std::vector<BasisFactor>& factors() const { return factors_; }
  bool is_constant() const { return factors_.empty(); }

  double value(const Eigen::VectorXd& z) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& z) const;

 private:
  std::string id_;
  std::vector<BasisFactor> factors_;
};

/// Candidate library over a d-dimensional state with named coordinates.
class Library {
 public:
  Library() = default;
  /// Terms are given by identifier, e.g. "p^2", "q*p", "cos(q)", "1".
  Library(std::vector<std::string> coord_names, const std::vector<std::string>& term_ids);

  int dim() const { return static_cast<int>(coord_names_.size()); }
  int size() const { return static_cast<int>(terms_.size()); }
  const std::vector<std::string>& coord_names() const { return coord_names_; }
  const BasisTerm& term(int j) const { return terms_.at(static_cast<std::size_t>(j)); }
  int index_of(const std::string& id) const;

  Eigen::VectorXd values(const Eigen::VectorXd& z) const;
  /// p x d matrix whose row j is grad Theta_j(z).
  Eigen::MatrixXd gradients(const Eigen::VectorXd& z) const;

  /// H(z) = Theta(z)^T xi and its gradient.
  double hamiltonian(const Eigen::VectorXd& xi, const Eigen::VectorXd& z) const;
  Eigen::VectorXd hamiltonian_gradient(const Eigen::VectorXd& xi, const Eigen::VectorXd& z) const;

 private:
  std::vector<std::string> coord_names_;
  std::vector<BasisTerm> terms_;
};

struct LibraryEvaluation {
  Eigen::MatrixXd theta;                   // n x p
  std::vector<Eigen::MatrixXd> gradients;  // n entries, each p x d
};

/// Evaluates the library on the rows of `states` (n x d).
LibraryEvaluation build_library(const Eigen::MatrixXd& states, const Library& library);

}  // namespace phmix
