#pragma once

// Finite SCM  z -> a, z -> x, a -> x, z -> c  with every quantity computed
// by exact enumeration.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace causalgen {

using Distribution = std::vector<double>;

class ScmValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class PositivityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct TabularSCM {
  Distribution prior;                           // p0(z), size K
  std::vector<Distribution> propensity;         // pA(a | z), K rows of size 2
  std::vector<std::vector<Distribution>> outcome;  // pX(x | a, z), [a][z] rows of size |X|
  std::vector<Distribution> proxy;              // pC(c | z), K rows of size |C|

  int num_z() const { return static_cast<int>(prior.size()); }
  int num_x() const { return outcome.empty() || outcome[0].empty() ? 0 : static_cast<int>(outcome[0][0].size()); }
  int num_c() const { return proxy.empty() ? 0 : static_cast<int>(proxy[0].size()); }

  // Shapes, positivity, and row sums within 1e-12. Throws
  // ScmValidationError naming the offending row.
  void validate() const;
};

// joint[x][a][z][c] = pX(x|a,z) pA(a|z) pC(c|z) p0(z)
using JointTable = std::vector<std::vector<std::vector<std::vector<double>>>>;
JointTable joint(const TabularSCM& scm);

// p(x | a) = sum_z pX(x|a,z) pA(a|z) p0(z) / p(a)
Distribution conditional_x_given_a(const TabularSCM& scm, int a);
// p(x | do(a)) = sum_z pX(x|a,z) p0(z)
Distribution interventional_x_do_a(const TabularSCM& scm, int a);
// sum_z p(x|a) p(z|x,a) p(a) / pA(a|z), every term from the joint.
// Throws PositivityError if any propensity entry is zero.
Distribution propensity_reweighted(const TabularSCM& scm, int a);

// Rows drawn from a symmetric Dirichlet(1), floored at min_prob, renormalized.
TabularSCM random_scm(int k, int num_x, int num_c, uint64_t seed, double min_prob = 0.01);

double max_abs_difference(const Distribution& p, const Distribution& q);
double total_variation(const Distribution& p, const Distribution& q);

// Sectioned key=value text:  [prior] z0 = ...  [propensity] z0 = p(a=0) p(a=1)
// [outcome] a0.z0 = ...  [proxy] z0 = ...
void write_scm(std::ostream& out, const TabularSCM& scm);
TabularSCM read_scm(std::istream& in);

struct OracleCheckReport {
  int n_scms = 0;
  double max_identity_error = 0;  // reweighted vs interventional
  double max_collapse_error = 0;  // conditional vs interventional, pA constant
  double confounded_tv = 0;       // fixed confounded instance
  std::vector<std::string> failures;

  bool passed() const { return failures.empty(); }
};

// Identity check over n random SCMs with sizes drawn up to the given
// maxima, plus the no-confounding collapse and the confounded instance.
OracleCheckReport run_oracle_check(int n_scms, int max_k, int max_x, int max_c, uint64_t seed);

// Checks one explicit SCM (identity and sums). Errors become failures.
OracleCheckReport check_scm(const TabularSCM& scm);

// pA(1|z=1)=0.9, pA(1|z=0)=0.1 with outcomes that differ across z.
TabularSCM confounded_instance();
// Replaces every propensity row with (1 - p1, p1).
TabularSCM with_constant_propensity(TabularSCM scm, double p1);

}  // namespace causalgen
