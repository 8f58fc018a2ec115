#pragma once

// Scriptable in-memory model handle for tests.

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "cotsteer/adapter/handle.hpp"
#include "cotsteer/common/errors.hpp"

namespace cotsteer::testsupport {

class FakeHandle : public adapter::ModelHandle {
 public:
  std::set<adapter::Capability> caps = {adapter::Capability::generate,
                                        adapter::Capability::answer_probs};
  std::function<std::string(const std::string&, const adapter::GenOptions&)> on_generate;
  std::function<std::vector<double>(const std::string&, const std::vector<std::string>&)>
      on_probs;
  mutable std::vector<std::string> generate_prompts;
  mutable std::vector<std::string> prob_prompts;

  std::string kind() const override { return "fake"; }
  const std::set<adapter::Capability>& capabilities() const override { return caps; }

  std::string generate_text(const std::string& prompt,
                            const adapter::GenOptions& opt) const override {
    if (!on_generate) fail(Errc::bad_request, "no generate script");
    generate_prompts.push_back(prompt);
    return on_generate(prompt, opt);
  }

  std::vector<double> answer_probs(const std::string& prompt,
                                   const std::vector<std::string>& labels) const override {
    if (!on_probs) fail(Errc::bad_request, "no probs script");
    prob_prompts.push_back(prompt);
    return on_probs(prompt, labels);
  }

  std::vector<lm::HeadActivation> capture_head_activations(
      const std::string&, const std::vector<lm::CaptureSpec>&) const override {
    fail(Errc::capability_missing, "fake handle has no activations");
  }
};

}  // namespace cotsteer::testsupport
