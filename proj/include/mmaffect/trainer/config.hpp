#pragma once

#include <cctype>
#include <charconv>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "mmaffect/core.hpp"
#include "mmaffect/dataio/dataset.hpp"
#include "mmaffect/encoder.hpp"
#include "mmaffect/rng.hpp"

namespace mmaffect {

/*
 * Flat key=value text, one pair per line; '#' starts a comment. Every key is
 * optional, unknown keys are rejected.
 */
struct TrainConfig {
  Task task = Task::VA;
  EncoderVariant encoder = EncoderVariant::Classic;
  std::size_t d_model = 256;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::optional<double> dropout;  // unset: 0.2 for TEMMA, 0.1 otherwise
  std::size_t head_hidden = 256;
  std::size_t segment_length = kSegmentLength;
  std::size_t batch_size = kBatchSize;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;
  std::size_t checkpoint_every = 1;  // epochs between checkpoints; 0 keeps only the final one
  std::optional<double> target_score;  // stop once the validation aggregate reaches it
  std::vector<std::string> features;   // empty: every registered feature

  double effective_dropout() const {
    if (dropout) return *dropout;
    return encoder == EncoderVariant::TEMMA ? 0.2 : 0.1;
  }

  void validate() const {
    if (!(lr > 0.0)) fail(ErrorCode::InvalidConfig, "lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      fail(ErrorCode::InvalidConfig, "betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) fail(ErrorCode::InvalidConfig, "eps must be positive");
    if (!(grad_clip >= 0.0)) fail(ErrorCode::InvalidConfig, "grad_clip must be non-negative");
    if (const double p = effective_dropout(); !(p >= 0.0 && p < 1.0)) fail(ErrorCode::InvalidConfig, "dropout must lie in [0, 1)");
    if (d_model == 0) fail(ErrorCode::InvalidConfig, "d_model must be positive");
    if (n_heads == 0) fail(ErrorCode::InvalidConfig, "n_heads must be positive");
    if (segment_length == 0 || batch_size == 0) fail(ErrorCode::InvalidConfig, "segment_length and batch_size must be positive");
  }

  /// Canonical text of every field, one key=value per line.
  std::string to_text() const {
    std::string s;
    auto put = [&](const char* key, const std::string& value) { s += std::string(key) + "=" + value + "\n"; };
    put("task", std::string(to_string(task)));
    put("encoder", std::string(to_string(encoder)));
    put("d_model", std::to_string(d_model));
    put("n_layers", std::to_string(n_layers));
    put("n_heads", std::to_string(n_heads));
    put("dropout", dropout ? number(*dropout) : "auto");
    put("head_hidden", std::to_string(head_hidden));
    put("segment_length", std::to_string(segment_length));
    put("batch_size", std::to_string(batch_size));
    put("lr", number(lr));
    put("beta1", number(beta1));
    put("beta2", number(beta2));
    put("eps", number(eps));
    put("grad_clip", number(grad_clip));
    put("epochs", std::to_string(epochs));
    put("seed", std::to_string(seed));
    put("checkpoint_dir", checkpoint_dir);
    put("checkpoint_every", std::to_string(checkpoint_every));
    put("target_score", target_score ? number(*target_score) : "none");
    std::string joined;
    for (std::size_t i = 0; i < features.size(); ++i) joined += (i ? "," : "") + features[i];
    put("features", joined);
    return s;
  }

  /// Hash of the fields that shape the model and its trajectory. Run-length
  /// and bookkeeping keys (epochs, checkpoint_*, target_score) are excluded
  /// so a run can be resumed with a longer schedule.
  std::uint64_t hash() const {
    std::uint64_t h = fnv1a("mmaffect-train-config");
    const std::string text = to_text();
    std::size_t start = 0;
    while (start < text.size()) {
      const std::size_t nl = text.find('\n', start);
      const std::string line = text.substr(start, nl - start);
      start = nl + 1;
      const std::string key = line.substr(0, line.find('='));
      if (key == "epochs" || key == "checkpoint_dir" || key == "checkpoint_every" || key == "target_score") continue;
      h = fnv1a(line + "\n", h);
    }
    return h;
  }

  static std::string number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }
};

namespace detail {

inline std::string_view trim_ws(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] inline void bad_config(std::size_t line_no, std::string_view key, const std::string& why) {
  fail(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + " (" + std::string(key) + "): " + why);
}

template <typename T>
T parse_number(std::string_view value, std::size_t line_no, std::string_view key) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    bad_config(line_no, key, "'" + std::string(value) + "' is not a valid number");
  }
  return out;
}

}  // namespace detail

/// Keys absent from `text` keep their value from `defaults`.
inline TrainConfig parse_train_config(std::string_view text, TrainConfig defaults = {}) {
  TrainConfig c = std::move(defaults);
  std::size_t start = 0, line_no = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(start, nl - start);
    start = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim_ws(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) detail::bad_config(line_no, line, "expected key=value");
    const std::string_view key = detail::trim_ws(line.substr(0, eq));
    const std::string_view value = detail::trim_ws(line.substr(eq + 1));
    auto size = [&] { return detail::parse_number<std::size_t>(value, line_no, key); };
    auto real = [&] { return detail::parse_number<double>(value, line_no, key); };
    try {
      if (key == "task") c.task = parse_task(value);
      else if (key == "encoder") c.encoder = parse_variant(value);
      else if (key == "d_model") c.d_model = size();
      else if (key == "n_layers") c.n_layers = size();
      else if (key == "n_heads") c.n_heads = size();
      else if (key == "dropout") c.dropout = value == "auto" ? std::nullopt : std::optional<double>(real());
      else if (key == "head_hidden") c.head_hidden = size();
      else if (key == "segment_length") c.segment_length = size();
      else if (key == "batch_size") c.batch_size = size();
      else if (key == "lr") c.lr = real();
      else if (key == "beta1") c.beta1 = real();
      else if (key == "beta2") c.beta2 = real();
      else if (key == "eps") c.eps = real();
      else if (key == "grad_clip") c.grad_clip = real();
      else if (key == "epochs") c.epochs = size();
      else if (key == "seed") c.seed = detail::parse_number<std::uint64_t>(value, line_no, key);
      else if (key == "checkpoint_dir") c.checkpoint_dir = std::string(value);
      else if (key == "checkpoint_every") c.checkpoint_every = size();
      else if (key == "target_score") c.target_score = value == "none" ? std::nullopt : std::optional<double>(real());
      else if (key == "features") {
        c.features.clear();
        if (!value.empty()) {
          for (auto part : io::detail::split_commas(value)) c.features.emplace_back(detail::trim_ws(part));
        }
      } else {
        detail::bad_config(line_no, key, "unknown key");
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidConfig) throw;
      detail::bad_config(line_no, key, e.what());
    }
  }
  c.validate();
  return c;
}

inline TrainConfig read_train_config(const std::filesystem::path& path, TrainConfig defaults = {}) {
  return parse_train_config(io::read_file(path), std::move(defaults));
}

}  // namespace mmaffect
