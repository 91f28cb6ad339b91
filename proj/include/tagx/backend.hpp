#pragma once

#include "tagx/common.hpp"
#include "tagx/prompt.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace tagx {

struct BackendDescriptor {
  std::string id;
  std::size_t embedding_dim = 0;  // h
  std::size_t max_prompt_segments = 0;
  std::size_t max_concurrency = 1;
  bool deterministic = false;

  void validate() const;
};

nlohmann::json descriptor_to_json(const BackendDescriptor& d);
BackendDescriptor descriptor_from_json(const nlohmann::json& j);

struct GenerationConfig {
  std::size_t max_tokens = 4096;
  /// Only greedy decoding is supported.
  std::string decoding = "greedy";
  std::vector<std::string> stop;

  void validate() const;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;

  virtual BackendDescriptor descriptor() const = 0;
  /// Unit vector of dimension descriptor().embedding_dim.
  virtual Vector embed_text(const std::string& text) const = 0;
  virtual std::string generate(const HybridPrompt& prompt, const GenerationConfig& cfg) const = 0;
};

struct MockOptions {
  std::size_t dim = 64;
  double theta = 0.5;
  std::uint64_t seed = 0;
  /// Extra node ids named in every response, for exercising the filter.
  std::vector<NodeId> hallucinate_ids;
  std::size_t max_text_tokens = 8192;
  std::size_t max_prompt_segments = 1u << 20;
};

/// Deterministic stand-in for a language model.
///
/// embed_text: lowercase alphanumeric tokens; the i-th occurrence of token t
/// contributes a standard Gaussian vector drawn from Rng(mix_seed(mix_seed(
/// seed, fnv1a64(t)), i)); the sum is normalized. Text without tokens maps to
/// the vector drawn from Rng(mix_seed(seed, fnv1a64(""))).
///
/// generate: one stanza per candidate in ascending id order. A candidate is
/// marked YES iff the cosine between its payload and the target's payload is
/// at least theta. Soft payloads are compared through their pooled, normalized
/// token mean; text payloads through embed_text.
class MockBackend final : public LlmBackend {
 public:
  explicit MockBackend(MockOptions options = {});

  BackendDescriptor descriptor() const override;
  Vector embed_text(const std::string& text) const override;
  std::string generate(const HybridPrompt& prompt, const GenerationConfig& cfg) const override;

  const MockOptions& options() const noexcept { return options_; }

 private:
  MockOptions options_;
};

std::uint64_t fnv1a64(const std::string& s) noexcept;
std::vector<std::string> tokenize(const std::string& text);

/// HTTP/JSON client for a remote model server (POST /embed, POST /generate,
/// GET /descriptor). Failed requests are retried once.
class BridgeBackend final : public LlmBackend {
 public:
  explicit BridgeBackend(std::string base_url, double timeout_seconds = 600.0);

  BackendDescriptor descriptor() const override;
  Vector embed_text(const std::string& text) const override;
  std::string generate(const HybridPrompt& prompt, const GenerationConfig& cfg) const override;

  const std::string& url() const noexcept { return url_; }

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;
  nlohmann::json get(const std::string& path) const;

  std::string url_;
  double timeout_;
  BackendDescriptor descriptor_;
};

/// Wire encoding of a prompt for POST /generate.
nlohmann::json prompt_to_wire(const HybridPrompt& prompt, const GenerationConfig& cfg);

/// "mock" selects MockBackend; anything else is a bridge URL. An empty
/// selection falls back to TAGX_BRIDGE_URL, then to the mock.
std::unique_ptr<LlmBackend> make_backend(const std::string& selection, const MockOptions& mock = {});

}  // namespace tagx
