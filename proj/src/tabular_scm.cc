#include "causalgen/tabular_scm.h"

#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "causalgen/rng.h"

namespace causalgen {

namespace {

constexpr double kRowTolerance = 1e-12;

void check_row(const Distribution& row, size_t size, const std::string& where) {
  if (row.size() != size) {
    throw ScmValidationError(where + ": expected " + std::to_string(size) + " entries, got " +
                             std::to_string(row.size()));
  }
  double sum = 0;
  for (double v : row) {
    if (!(v > 0) || !std::isfinite(v)) throw ScmValidationError(where + ": entries must be strictly positive");
    sum += v;
  }
  if (std::abs(sum - 1.0) > kRowTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << where << ": row sums to " << sum;
    throw ScmValidationError(msg.str());
  }
}

void check_a(int a) {
  if (a != 0 && a != 1) throw std::invalid_argument("attribute must be 0 or 1");
}

Distribution dirichlet_row(int n, Rng& rng, double min_prob) {
  Distribution row(static_cast<size_t>(n));
  double sum = 0;
  for (auto& v : row) {
    v = -std::log(rng.uniform_open());
    sum += v;
  }
  for (auto& v : row) v /= sum;
  for (auto& v : row) v = std::max(v, min_prob);
  sum = std::accumulate(row.begin(), row.end(), 0.0);
  for (auto& v : row) v /= sum;
  return row;
}

std::string z_key(int z) { return "z" + std::to_string(z); }

void write_row(std::ostream& out, const std::string& key, const Distribution& row) {
  out << key << " =";
  for (double v : row) out << ' ' << v;
  out << '\n';
}

}  // namespace

void TabularSCM::validate() const {
  const size_t k = prior.size();
  if (k == 0) throw ScmValidationError("prior: empty");
  check_row(prior, k, "prior");
  if (propensity.size() != k) throw ScmValidationError("propensity: expected one row per z");
  for (size_t z = 0; z < k; ++z) check_row(propensity[z], 2, "propensity " + z_key(static_cast<int>(z)));
  if (outcome.size() != 2) throw ScmValidationError("outcome: expected rows for a=0 and a=1");
  const size_t nx = outcome[0].empty() ? 0 : outcome[0][0].size();
  if (nx == 0) throw ScmValidationError("outcome: empty");
  for (int a = 0; a < 2; ++a) {
    if (outcome[a].size() != k) throw ScmValidationError("outcome a" + std::to_string(a) + ": expected one row per z");
    for (size_t z = 0; z < k; ++z) {
      check_row(outcome[a][z], nx, "outcome a" + std::to_string(a) + "." + z_key(static_cast<int>(z)));
    }
  }
  if (proxy.size() != k) throw ScmValidationError("proxy: expected one row per z");
  const size_t nc = proxy[0].size();
  if (nc == 0) throw ScmValidationError("proxy: empty");
  for (size_t z = 0; z < k; ++z) check_row(proxy[z], nc, "proxy " + z_key(static_cast<int>(z)));
}

JointTable joint(const TabularSCM& scm) {
  scm.validate();
  const int K = scm.num_z(), X = scm.num_x(), C = scm.num_c();
  JointTable j(X, std::vector<std::vector<std::vector<double>>>(2, std::vector<std::vector<double>>(
                                                                       K, std::vector<double>(C, 0.0))));
  for (int x = 0; x < X; ++x)
    for (int a = 0; a < 2; ++a)
      for (int z = 0; z < K; ++z)
        for (int c = 0; c < C; ++c)
          j[x][a][z][c] = scm.outcome[a][z][x] * scm.propensity[z][a] * scm.proxy[z][c] * scm.prior[z];
  return j;
}

Distribution conditional_x_given_a(const TabularSCM& scm, int a) {
  check_a(a);
  scm.validate();
  Distribution out(static_cast<size_t>(scm.num_x()), 0.0);
  double pa = 0;
  for (int z = 0; z < scm.num_z(); ++z) pa += scm.propensity[z][a] * scm.prior[z];
  for (int x = 0; x < scm.num_x(); ++x) {
    double s = 0;
    for (int z = 0; z < scm.num_z(); ++z) s += scm.outcome[a][z][x] * scm.propensity[z][a] * scm.prior[z];
    out[x] = s / pa;
  }
  return out;
}

Distribution interventional_x_do_a(const TabularSCM& scm, int a) {
  check_a(a);
  scm.validate();
  Distribution out(static_cast<size_t>(scm.num_x()), 0.0);
  for (int x = 0; x < scm.num_x(); ++x) {
    for (int z = 0; z < scm.num_z(); ++z) out[x] += scm.outcome[a][z][x] * scm.prior[z];
  }
  return out;
}

Distribution propensity_reweighted(const TabularSCM& scm, int a) {
  check_a(a);
  for (size_t z = 0; z < scm.propensity.size(); ++z) {
    for (size_t v = 0; v < scm.propensity[z].size(); ++v) {
      if (!(scm.propensity[z][v] > 0)) {
        throw PositivityError("positivity violation: pA(a=" + std::to_string(v) + " | z" + std::to_string(z) +
                              ") = 0");
      }
    }
  }
  const JointTable j = joint(scm);
  const int K = scm.num_z(), X = scm.num_x(), C = scm.num_c();

  // Marginals of the joint: p(x, a, z), p(x, a), p(a).
  std::vector<std::vector<double>> pxz(X, std::vector<double>(K, 0.0));
  std::vector<double> px(X, 0.0);
  double pa = 0;
  for (int x = 0; x < X; ++x) {
    for (int z = 0; z < K; ++z) {
      for (int c = 0; c < C; ++c) pxz[x][z] += j[x][a][z][c];
      px[x] += pxz[x][z];
    }
    pa += px[x];
  }
  Distribution out(static_cast<size_t>(X), 0.0);
  for (int x = 0; x < X; ++x) {
    const double p_x_given_a = px[x] / pa;
    for (int z = 0; z < K; ++z) {
      const double p_z_given_xa = pxz[x][z] / px[x];
      out[x] += p_x_given_a * p_z_given_xa * pa / scm.propensity[z][a];
    }
  }
  return out;
}

TabularSCM random_scm(int k, int num_x, int num_c, uint64_t seed, double min_prob) {
  if (k < 1 || num_x < 1 || num_c < 1) throw std::invalid_argument("random_scm: sizes must be >= 1");
  if (!(min_prob > 0)) throw std::invalid_argument("random_scm: min_prob must be > 0");
  const int widest = std::max({k, num_x, num_c, 2});
  if (min_prob * widest > 1.0) throw std::invalid_argument("random_scm: min_prob too large for the table sizes");
  Rng rng(seed);
  TabularSCM s;
  s.prior = dirichlet_row(k, rng, min_prob);
  for (int z = 0; z < k; ++z) s.propensity.push_back(dirichlet_row(2, rng, min_prob));
  s.outcome.resize(2);
  for (int a = 0; a < 2; ++a) {
    for (int z = 0; z < k; ++z) s.outcome[a].push_back(dirichlet_row(num_x, rng, min_prob));
  }
  for (int z = 0; z < k; ++z) s.proxy.push_back(dirichlet_row(num_c, rng, min_prob));
  s.validate();
  return s;
}

double max_abs_difference(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw std::invalid_argument("distribution sizes differ");
  double m = 0;
  for (size_t i = 0; i < p.size(); ++i) m = std::max(m, std::abs(p[i] - q[i]));
  return m;
}

double total_variation(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw std::invalid_argument("distribution sizes differ");
  double s = 0;
  for (size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

void write_scm(std::ostream& out, const TabularSCM& scm) {
  const auto old = out.precision(17);
  out << "[prior]\n";
  for (int z = 0; z < scm.num_z(); ++z) write_row(out, z_key(z), {scm.prior[z]});
  out << "\n[propensity]\n";
  for (int z = 0; z < scm.num_z(); ++z) write_row(out, z_key(z), scm.propensity[z]);
  out << "\n[outcome]\n";
  for (int a = 0; a < 2; ++a) {
    for (int z = 0; z < scm.num_z(); ++z) write_row(out, "a" + std::to_string(a) + "." + z_key(z), scm.outcome[a][z]);
  }
  out << "\n[proxy]\n";
  for (int z = 0; z < scm.num_z(); ++z) write_row(out, z_key(z), scm.proxy[z]);
  out.precision(old);
}

TabularSCM read_scm(std::istream& in) {
  std::map<std::string, std::map<std::string, Distribution>> sections;
  std::string section, line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    if (line.front() == '[') {
      if (line.back() != ']') throw ScmValidationError("line " + std::to_string(line_no) + ": malformed section");
      section = line.substr(1, line.size() - 2);
      if (section != "prior" && section != "propensity" && section != "outcome" && section != "proxy") {
        throw ScmValidationError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      }
      continue;
    }
    if (section.empty()) throw ScmValidationError("line " + std::to_string(line_no) + ": entry outside a section");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ScmValidationError("line " + std::to_string(line_no) + ": expected key = values");
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    std::istringstream values(line.substr(eq + 1));
    Distribution row;
    double v;
    while (values >> v) row.push_back(v);
    if (!values.eof()) throw ScmValidationError("line " + std::to_string(line_no) + ": non-numeric value");
    if (!sections[section].emplace(key, row).second) {
      throw ScmValidationError("line " + std::to_string(line_no) + ": duplicate key " + key);
    }
  }

  auto need = [&](const std::string& sec, const std::string& key) -> const Distribution& {
    auto s = sections.find(sec);
    if (s == sections.end()) throw ScmValidationError("missing section [" + sec + "]");
    auto k = s->second.find(key);
    if (k == s->second.end()) throw ScmValidationError("[" + sec + "] missing key " + key);
    return k->second;
  };

  TabularSCM scm;
  const int K = static_cast<int>(sections["prior"].size());
  if (K == 0) throw ScmValidationError("missing section [prior]");
  for (int z = 0; z < K; ++z) {
    const Distribution& p = need("prior", z_key(z));
    if (p.size() != 1) throw ScmValidationError("[prior] " + z_key(z) + ": expected one value");
    scm.prior.push_back(p[0]);
    scm.propensity.push_back(need("propensity", z_key(z)));
    scm.proxy.push_back(need("proxy", z_key(z)));
  }
  scm.outcome.resize(2);
  for (int a = 0; a < 2; ++a) {
    for (int z = 0; z < K; ++z) scm.outcome[a].push_back(need("outcome", "a" + std::to_string(a) + "." + z_key(z)));
  }
  if (sections["propensity"].size() != static_cast<size_t>(K) || sections["proxy"].size() != static_cast<size_t>(K) ||
      sections["outcome"].size() != static_cast<size_t>(2 * K)) {
    throw ScmValidationError("unexpected keys: every section must be indexed by the prior's z values");
  }
  scm.validate();
  return scm;
}

TabularSCM confounded_instance() {
  TabularSCM s;
  s.prior = {0.5, 0.5};
  s.propensity = {{0.9, 0.1}, {0.1, 0.9}};
  s.outcome = {{{0.7, 0.2, 0.1}, {0.1, 0.2, 0.7}}, {{0.6, 0.3, 0.1}, {0.1, 0.3, 0.6}}};
  s.proxy = {{0.8, 0.2}, {0.2, 0.8}};
  return s;
}

TabularSCM with_constant_propensity(TabularSCM scm, double p1) {
  for (auto& row : scm.propensity) row = {1.0 - p1, p1};
  return scm;
}

OracleCheckReport check_scm(const TabularSCM& scm) {
  OracleCheckReport rep;
  rep.n_scms = 1;
  try {
    for (int a = 0; a < 2; ++a) {
      const Distribution iv = interventional_x_do_a(scm, a);
      const double err = max_abs_difference(propensity_reweighted(scm, a), iv);
      rep.max_identity_error = std::max(rep.max_identity_error, err);
      if (!(err < 1e-10)) rep.failures.push_back("identity error " + std::to_string(err) + " at a=" + std::to_string(a));
      for (const auto& d : {iv, conditional_x_given_a(scm, a)}) {
        const double mass = std::accumulate(d.begin(), d.end(), 0.0);
        if (std::abs(mass - 1.0) > 1e-10) rep.failures.push_back("derived distribution does not sum to 1");
      }
    }
  } catch (const std::exception& e) {
    rep.failures.push_back(e.what());
  }
  return rep;
}

OracleCheckReport run_oracle_check(int n_scms, int max_k, int max_x, int max_c, uint64_t seed) {
  if (n_scms < 0 || max_k < 1 || max_x < 1 || max_c < 1) throw std::invalid_argument("oracle check: bad sizes");
  OracleCheckReport rep;
  for (int i = 0; i < n_scms; ++i) {
    Rng sizes(derive_seed(seed, 1, static_cast<uint64_t>(i)));
    const int k = 1 + static_cast<int>(sizes.uniform_int(static_cast<uint64_t>(max_k)));
    const int nx = 1 + static_cast<int>(sizes.uniform_int(static_cast<uint64_t>(max_x)));
    const int nc = 1 + static_cast<int>(sizes.uniform_int(static_cast<uint64_t>(max_c)));
    const TabularSCM scm = random_scm(k, nx, nc, derive_seed(seed, 2, static_cast<uint64_t>(i)));
    OracleCheckReport one = check_scm(scm);
    rep.max_identity_error = std::max(rep.max_identity_error, one.max_identity_error);
    for (auto& f : one.failures) rep.failures.push_back("scm " + std::to_string(i) + ": " + f);

    const TabularSCM flat = with_constant_propensity(scm, 0.3);
    for (int a = 0; a < 2; ++a) {
      const double err = max_abs_difference(conditional_x_given_a(flat, a), interventional_x_do_a(flat, a));
      rep.max_collapse_error = std::max(rep.max_collapse_error, err);
      if (!(err < 1e-12)) rep.failures.push_back("scm " + std::to_string(i) + ": collapse error " + std::to_string(err));
    }
    ++rep.n_scms;
  }
  const TabularSCM conf = confounded_instance();
  for (int a = 0; a < 2; ++a) {
    rep.confounded_tv =
        std::max(rep.confounded_tv, total_variation(conditional_x_given_a(conf, a), interventional_x_do_a(conf, a)));
  }
  if (!(rep.confounded_tv > 0.05)) rep.failures.push_back("confounded instance not detected");
  return rep;
}

}  // namespace causalgen
