#pragma once

// Uniform model interface. A handle is an immutable descriptor: generation,
// answer-option distributions, and (locally) activation capture. Edits attach
// by wrapping a handle, never by mutating one.
//
// Edit positioning: directives stored on a handle are re-anchored per call.
// generate_text applies them to every generated position, answer_probs and
// capture_head_activations to the final prompt position, where the answer
// distribution is read.

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/lm/checkpoint.hpp"
#include "cotsteer/lm/model.hpp"
#include "cotsteer/lm/tokenizer.hpp"

namespace cotsteer::adapter {

enum class Capability { generate, answer_probs, activations, intervene, finetune };

struct GenOptions {
  double tau = 0.0;
  int max_new_tokens = 64;
  uint64_t seed = 0;
};

class ModelHandle {
 public:
  virtual ~ModelHandle() = default;
  virtual std::string kind() const = 0;
  virtual const std::set<Capability>& capabilities() const = 0;
  bool has(Capability c) const { return capabilities().count(c) > 0; }

  virtual std::string generate_text(const std::string& prompt, const GenOptions& opt) const = 0;
  virtual std::vector<double> answer_probs(const std::string& prompt,
                                           const std::vector<std::string>& option_labels)
      const = 0;
  virtual std::vector<lm::HeadActivation> capture_head_activations(
      const std::string& prompt, const std::vector<lm::CaptureSpec>& specs) const = 0;
};

using HandlePtr = std::shared_ptr<const ModelHandle>;

namespace detail {

class LocalHandle : public ModelHandle {
 public:
  LocalHandle(std::shared_ptr<const lm::LocalBundle> bundle,
              std::vector<lm::EditDirective> edits)
      : bundle_(std::move(bundle)), edits_(std::move(edits)) {
    caps_ = {Capability::generate, Capability::answer_probs, Capability::activations,
             Capability::intervene, Capability::finetune};
  }

  std::string kind() const override { return "local"; }
  const std::set<Capability>& capabilities() const override { return caps_; }
  const lm::LocalBundle& bundle() const { return *bundle_; }
  std::shared_ptr<const lm::LocalBundle> bundle_ptr() const { return bundle_; }
  const std::vector<lm::EditDirective>& edits() const { return edits_; }

  std::string generate_text(const std::string& prompt, const GenOptions& opt) const override {
    const auto& tok = bundle_->tok;
    const std::vector<int> ids = tok.encode(prompt);
    lm::GenParams gp;
    gp.tau = opt.tau;
    gp.max_new = opt.max_new_tokens;
    gp.seed = opt.seed;
    gp.end_token = tok.has("<end>") ? tok.id("<end>") : -1;
    const auto res = lm::generate(bundle_->weights, ids, gp, anchored(int(ids.size())));
    return tok.decode(res.new_tokens);
  }

  std::vector<double> answer_probs(const std::string& prompt,
                                   const std::vector<std::string>& option_labels) const override {
    const auto& tok = bundle_->tok;
    const std::vector<int> ids = tok.encode(prompt);
    std::vector<int> opt_ids;
    for (const auto& label : option_labels) {
      if (!tok.has(label)) fail(Errc::unknown_option, "option label not in vocabulary: " + label);
      opt_ids.push_back(tok.id(label));
    }
    return lm::answer_distribution(bundle_->weights, ids, opt_ids,
                                   anchored(int(ids.size()) - 1));
  }

  std::vector<lm::HeadActivation> capture_head_activations(
      const std::string& prompt, const std::vector<lm::CaptureSpec>& specs) const override {
    const std::vector<int> ids = bundle_->tok.encode(prompt);
    return lm::forward(bundle_->weights, ids, specs, anchored(int(ids.size()) - 1)).captured;
  }

 private:
  std::vector<lm::EditDirective> anchored(int from_pos) const {
    std::vector<lm::EditDirective> out = edits_;
    for (auto& e : out) e.from_pos = from_pos < 0 ? 0 : from_pos;
    return out;
  }

  std::shared_ptr<const lm::LocalBundle> bundle_;
  std::vector<lm::EditDirective> edits_;
  std::set<Capability> caps_;
};

}  // namespace detail

inline HandlePtr make_local_handle(lm::LocalBundle bundle) {
  bundle.weights.cfg.validate();
  return std::make_shared<detail::LocalHandle>(
      std::make_shared<const lm::LocalBundle>(std::move(bundle)),
      std::vector<lm::EditDirective>{});
}

// Wrap a handle with activation edits. Existing edits stay; new ones append.
inline HandlePtr with_edits(const HandlePtr& base, std::vector<lm::EditDirective> edits) {
  if (!base) fail(Errc::bad_request, "null handle");
  if (!base->has(Capability::intervene))
    fail(Errc::capability_missing, "handle does not support activation edits");
  const auto* local = dynamic_cast<const detail::LocalHandle*>(base.get());
  if (!local) fail(Errc::capability_missing, "handle does not support activation edits");
  const auto& cfg = local->bundle().weights.cfg;
  lm::detail::validate_hooks(cfg, {}, edits);
  std::vector<lm::EditDirective> all = local->edits();
  all.insert(all.end(), edits.begin(), edits.end());
  return std::make_shared<detail::LocalHandle>(local->bundle_ptr(), std::move(all));
}

}  // namespace cotsteer::adapter
