#include "tagx/backend.hpp"

#include "tagx/projector.hpp"
#include "tagx/rng.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <unordered_map>

namespace tagx {

using nlohmann::json;

void BackendDescriptor::validate() const {
  if (embedding_dim < 1) throw BackendError("backend descriptor: embedding dim must be >= 1");
  if (max_concurrency < 1) throw BackendError("backend descriptor: max concurrency must be >= 1");
  if (max_prompt_segments < 1) throw BackendError("backend descriptor: max prompt segments must be >= 1");
}

json descriptor_to_json(const BackendDescriptor& d) {
  return {{"backend_id", d.id},
          {"embedding_dim", d.embedding_dim},
          {"max_prompt_segments", d.max_prompt_segments},
          {"max_concurrency", d.max_concurrency},
          {"deterministic", d.deterministic}};
}

BackendDescriptor descriptor_from_json(const json& j) {
  BackendDescriptor d;
  try {
    d.id = j.at("backend_id").get<std::string>();
    d.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    d.max_prompt_segments = j.at("max_prompt_segments").get<std::size_t>();
    d.max_concurrency = j.at("max_concurrency").get<std::size_t>();
    d.deterministic = j.at("deterministic").get<bool>();
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed backend descriptor: ") + e.what());
  }
  d.validate();
  return d;
}

void GenerationConfig::validate() const {
  if (max_tokens < 1) throw Error("generation: max_tokens must be >= 1");
  if (decoding != "greedy") throw Error("generation: only greedy decoding is supported");
}

std::uint64_t fnv1a64(const std::string& s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------
// Mock

MockBackend::MockBackend(MockOptions options) : options_(std::move(options)) {
  if (options_.dim < 1) throw Error("mock backend: dim must be >= 1");
  if (options_.max_text_tokens < 1) throw Error("mock backend: max_text_tokens must be >= 1");
}

BackendDescriptor MockBackend::descriptor() const {
  BackendDescriptor d;
  d.id = "mock-h" + std::to_string(options_.dim);
  d.embedding_dim = options_.dim;
  d.max_prompt_segments = options_.max_prompt_segments;
  d.max_concurrency = 64;
  d.deterministic = true;
  return d;
}

namespace {

Vector gaussian(std::uint64_t seed, std::size_t dim) {
  Rng rng(seed);
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return v;
}

std::string fixed3(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", x);
  return buf;
}

std::string truncate_words(const std::string& text, std::size_t max_words) {
  std::size_t words = 0;
  bool in_word = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const bool space = std::isspace(static_cast<unsigned char>(text[i])) != 0;
    if (!space && !in_word) {
      if (words == max_words) return text.substr(0, i);
      ++words;
    }
    in_word = !space;
  }
  return text;
}

}  // namespace

Vector MockBackend::embed_text(const std::string& text) const {
  auto tokens = tokenize(text);
  if (tokens.size() > options_.max_text_tokens) {
    spdlog::warn("mock backend: text of {} tokens truncated to {}", tokens.size(), options_.max_text_tokens);
    tokens.resize(options_.max_text_tokens);
  }
  const auto dim = options_.dim;
  if (tokens.empty()) {
    const Vector v = gaussian(mix_seed(options_.seed, fnv1a64("")), dim);
    return v / v.norm();
  }
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(dim));
  std::unordered_map<std::string, std::uint64_t> seen;
  for (const auto& t : tokens) {
    const std::uint64_t occurrence = seen[t]++;
    sum += gaussian(mix_seed(mix_seed(options_.seed, fnv1a64(t)), occurrence), dim);
  }
  const double norm = sum.norm();
  if (!(norm > 0.0)) throw BackendError("mock backend: zero text embedding");
  return sum / norm;
}

std::string MockBackend::generate(const HybridPrompt& prompt, const GenerationConfig& cfg) const {
  cfg.validate();
  if (prompt.segments.size() > options_.max_prompt_segments) {
    throw BackendError("prompt has " + std::to_string(prompt.segments.size()) + " segments; limit is " +
                       std::to_string(options_.max_prompt_segments));
  }
  std::map<NodeId, const Matrix*> soft;
  std::map<NodeId, std::string> text;
  for (const auto& seg : prompt.segments) {
    if (const auto* s = std::get_if<SoftSegment>(&seg)) {
      if (static_cast<std::size_t>(s->matrix.cols()) != options_.dim) {
        throw BackendError("soft segment width " + std::to_string(s->matrix.cols()) + " does not match h=" +
                           std::to_string(options_.dim));
      }
      soft.emplace(s->node, &s->matrix);
    } else {
      const auto& t = std::get<TextSegment>(seg);
      if (t.node) text[*t.node] += t.content;
    }
  }

  const bool use_soft = prompt.mode == PromptMode::soft;
  auto payload = [&](NodeId node) -> Vector {
    if (use_soft) {
      const auto it = soft.find(node);
      if (it == soft.end()) throw BackendError("malformed prompt: no soft segment for node " + std::to_string(node));
      return mean_pool_normalize(*it->second);
    }
    const auto it = text.find(node);
    if (it == text.end()) throw BackendError("malformed prompt: no text payload for node " + std::to_string(node));
    return embed_text(it->second);
  };

  Vector target;
  try {
    target = payload(prompt.target);
  } catch (const DegeneratePromptError&) {
    throw BackendError("malformed prompt: target soft prompt is degenerate");
  }

  std::string out;
  for (NodeId u : prompt.candidates) {
    Vector z;
    try {
      z = payload(u);
    } catch (const DegeneratePromptError&) {
      continue;
    }
    const double cos = z.dot(target);
    std::string summary;
    if (use_soft) {
      summary = "Pooled soft-prompt cosine to the target is " + fixed3(cos) + ".";
    } else {
      const auto words = tokenize(text[u]);
      summary = "Keywords:";
      for (std::size_t i = 0; i < words.size() && i < 8; ++i) summary += " " + words[i];
      summary += " (cosine " + fixed3(cos) + ").";
    }
    out += prompt.entity_noun + " " + std::to_string(u) + ":\nSummary: " + summary +
           "\nSupport: " + (cos >= options_.theta ? "YES" : "NO") + "\n\n";
  }
  for (NodeId id : options_.hallucinate_ids) {
    out += prompt.entity_noun + " " + std::to_string(id) + ":\nSummary: Closely related to the target.\nSupport: YES\n\n";
  }

  out = truncate_words(out, cfg.max_tokens);
  for (const auto& stop : cfg.stop) {
    if (stop.empty()) continue;
    const auto pos = out.find(stop);
    if (pos != std::string::npos) out.resize(pos);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bridge client

namespace {

struct ParsedUrl {
  std::string host;  // scheme://host[:port]
  std::string prefix;
};

ParsedUrl parse_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error("bridge URL must start with http://: " + url);
  if (url.compare(0, scheme, "http") != 0) throw Error("only plain http bridge URLs are supported: " + url);
  const auto slash = url.find('/', scheme + 3);
  ParsedUrl p;
  p.host = url.substr(0, slash);
  if (slash != std::string::npos) {
    p.prefix = url.substr(slash);
    while (!p.prefix.empty() && p.prefix.back() == '/') p.prefix.pop_back();
  }
  return p;
}

template <typename Call>
json http_call(const std::string& url, double timeout, const std::string& label, Call&& call) {
  const ParsedUrl u = parse_url(url);
  std::string last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    httplib::Client cli(u.host);
    const auto secs = static_cast<time_t>(timeout);
    cli.set_connection_timeout(secs, 0);
    cli.set_read_timeout(secs, 0);
    cli.set_write_timeout(secs, 0);
    auto res = call(cli, u.prefix);
    if (!res) {
      last = httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last = "HTTP " + std::to_string(res->status) + ": " + res->body;
    } else if (res->status != 200) {
      throw BackendError(label + " failed with HTTP " + std::to_string(res->status) + ": " + res->body);
    } else {
      try {
        return json::parse(res->body);
      } catch (const json::exception& e) {
        throw BackendError(label + " returned invalid JSON: " + e.what());
      }
    }
    if (attempt == 0) spdlog::warn("{} failed ({}); retrying once", label, last);
  }
  throw BackendError(label + " unavailable: " + last);
}

}  // namespace

BridgeBackend::BridgeBackend(std::string base_url, double timeout_seconds)
    : url_(std::move(base_url)), timeout_(timeout_seconds) {
  parse_url(url_);
  descriptor_ = descriptor_from_json(get("/descriptor"));
}

json BridgeBackend::post(const std::string& path, const json& body) const {
  const std::string payload = body.dump();
  return http_call(url_, timeout_, "POST " + path, [&](httplib::Client& cli, const std::string& prefix) {
    return cli.Post(prefix + path, payload, "application/json");
  });
}

json BridgeBackend::get(const std::string& path) const {
  return http_call(url_, timeout_, "GET " + path,
                   [&](httplib::Client& cli, const std::string& prefix) { return cli.Get(prefix + path); });
}

BackendDescriptor BridgeBackend::descriptor() const { return descriptor_; }

Vector BridgeBackend::embed_text(const std::string& text) const {
  const json res = post("/embed", {{"text", text}});
  std::vector<double> values;
  try {
    values = res.at("vector").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed /embed response: ") + e.what());
  }
  if (values.size() != descriptor_.embedding_dim) {
    throw BackendError("/embed returned dimension " + std::to_string(values.size()) + ", descriptor says " +
                       std::to_string(descriptor_.embedding_dim));
  }
  Vector v = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw BackendError("/embed returned a zero or non-finite vector");
  // float32 transport loses a little precision; restore the unit-norm contract.
  return v / norm;
}

json prompt_to_wire(const HybridPrompt& prompt, const GenerationConfig& cfg) {
  json segments = json::array();
  for (const auto& seg : prompt.segments) {
    if (const auto* t = std::get_if<TextSegment>(&seg)) {
      segments.push_back({{"kind", "text"}, {"content", t->content}});
    } else {
      const auto& m = std::get<SoftSegment>(seg).matrix;
      json rows = json::array();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(static_cast<float>(m(r, c)));
        rows.push_back(std::move(row));
      }
      segments.push_back({{"kind", "soft"}, {"matrix", std::move(rows)}});
    }
  }
  return {{"segments", std::move(segments)}, {"max_tokens", cfg.max_tokens}, {"stop", cfg.stop}};
}

std::string BridgeBackend::generate(const HybridPrompt& prompt, const GenerationConfig& cfg) const {
  cfg.validate();
  if (prompt.segments.size() > descriptor_.max_prompt_segments) {
    throw BackendError("prompt has " + std::to_string(prompt.segments.size()) + " segments; bridge limit is " +
                       std::to_string(descriptor_.max_prompt_segments));
  }
  const json res = post("/generate", prompt_to_wire(prompt, cfg));
  try {
    return res.at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed /generate response: ") + e.what());
  }
}

std::unique_ptr<LlmBackend> make_backend(const std::string& selection, const MockOptions& mock) {
  std::string sel = selection;
  if (sel.empty()) {
    const char* env = std::getenv("TAGX_BRIDGE_URL");
    sel = env && *env ? env : "mock";
  }
  if (sel == "mock") return std::make_unique<MockBackend>(mock);
  return std::make_unique<BridgeBackend>(sel);
}

}  // namespace tagx
