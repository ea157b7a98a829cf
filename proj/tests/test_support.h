#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "causalgen/autodiff.h"
#include "causalgen/corpus.h"
#include "causalgen/nn.h"
#include "causalgen/seq_model.h"

namespace causalgen::fixtures {

// V = 2 specials + 2 attribute + 2 confounder + 6 filler = 12.
inline CorpusSpec toy_spec() {
  CorpusSpec s;
  s.n_attr_tokens_per_class = 1;
  s.n_conf_tokens_per_class = 1;
  s.n_filler_tokens = 6;
  s.n_train = 200;
  s.n_val = 40;
  s.n_test = 40;
  s.min_len = 3;
  s.max_len = 6;
  s.seed = 3;
  return s;
}

inline ModelConfig toy_model() {
  ModelConfig m;
  m.vocab_size = 12;
  m.a_dim = 2;
  m.z_dim = 4;
  m.hidden_dim = 5;
  m.emb_dim = 3;
  m.c_dim = 2;
  m.seed = 17;
  return m;
}

struct GradCheck {
  std::string worst_group;
  double worst_relative_error = 0;
};

// Compares tape gradients of loss() against central differences for every
// trainable parameter. The error of a group is ||g - g_fd|| / max(||g|| +
// ||g_fd||, 1e-12).
inline GradCheck check_gradients(const nn::ParameterRefs& params, const std::function<ad::Var(ad::Tape&)>& loss,
                                 double h = 1e-5) {
  nn::zero_grad(params);
  {
    ad::Tape tape;
    ad::Var l = loss(tape);
    tape.backward(l);
  }
  auto eval = [&] {
    ad::Tape tape(false);
    return loss(tape).scalar();
  };
  GradCheck out;
  for (const auto* cp : params) {
    if (!cp->trainable) continue;
    auto* p = const_cast<ad::Parameter*>(cp);
    ad::Matrix fd(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& w = p->value.data()[i];
      const double saved = w;
      w = saved + h;
      const double up = eval();
      w = saved - h;
      const double down = eval();
      w = saved;
      fd.data()[i] = (up - down) / (2 * h);
    }
    const double denom = std::max(p->grad.norm() + fd.norm(), 1e-12);
    const double err = (p->grad - fd).norm() / denom;
    if (err > out.worst_relative_error) {
      out.worst_relative_error = err;
      out.worst_group = p->name();
    }
  }
  nn::zero_grad(params);
  return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("causalgen-test-" + tag + "-" + std::to_string(reinterpret_cast<uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace causalgen::fixtures
