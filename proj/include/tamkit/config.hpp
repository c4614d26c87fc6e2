#pragma once

// Flat key=value run configuration. Lines are "key = value"; '#' starts a
// comment. Every key has a default, unknown keys are errors, and later sources
// override earlier ones (defaults < file < command line).

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tamkit/caption_parser.hpp"
#include "tamkit/common.hpp"
#include "tamkit/trainer.hpp"

namespace tamkit {

struct RunConfig {
  std::string captions;
  std::string images;
  std::string vocab;
  std::string lexicon;
  std::string irregulars;
  std::string embeddings;
  std::string output = "out";
  TrainConfig train;
  double alpha = kDefaultBackgroundAlpha;  // background exponent at inference
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) fail(Errc::InvalidConfig, key + ": '" + v + "' is not a number");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) fail(Errc::InvalidConfig, key + ": '" + v + "' is not a non-negative integer");
  return out;
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_uint(key, item));
  }
  return out;
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every accepted key in echo order.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::format_double;
  using detail::parse_double;
  using detail::parse_uint;
  auto text = [](std::string RunConfig::*field, std::string name, std::string help) {
    return ConfigKey{name, std::move(help), [field](RunConfig& c, const std::string& v) { c.*field = v; },
                     [field](const RunConfig& c) { return c.*field; }};
  };
  auto real = [](std::string name, std::string help, std::function<double&(RunConfig&)> ref) {
    return ConfigKey{name, std::move(help),
                     [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_double(name, v); },
                     [ref](const RunConfig& c) { return format_double(ref(const_cast<RunConfig&>(c))); }};
  };
  auto count = [](std::string name, std::string help, std::function<std::size_t&(RunConfig&)> ref) {
    return ConfigKey{name, std::move(help),
                     [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_uint(name, v); },
                     [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
  };
  static const std::vector<ConfigKey> keys{
      text(&RunConfig::captions, "captions", "caption corpus, JSONL {image_id, captions}"),
      text(&RunConfig::images, "images", "directory of {image_id}.ppm"),
      text(&RunConfig::vocab, "vocab", "class vocabulary TSV"),
      text(&RunConfig::lexicon, "lexicon", "lexicon directory"),
      text(&RunConfig::irregulars, "irregulars", "irregular plurals TSV (optional)"),
      text(&RunConfig::embeddings, "embeddings", "word vector table"),
      text(&RunConfig::output, "output", "output directory"),
      ConfigKey{"seed", "random seed",
                [](RunConfig& c, const std::string& v) { c.train.seed = parse_uint("seed", v); },
                [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      count("epochs", "training epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; }),
      count("batch_size", "images per step", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }),
      real("lr_weights", "base learning rate of weights", [](RunConfig& c) -> double& { return c.train.sgd.lr_weights; }),
      real("lr_biases", "base learning rate of biases", [](RunConfig& c) -> double& { return c.train.sgd.lr_biases; }),
      real("weight_decay", "L2 weight decay", [](RunConfig& c) -> double& { return c.train.sgd.weight_decay; }),
      real("poly_power", "polynomial decay power", [](RunConfig& c) -> double& { return c.train.sgd.poly_power; }),
      real("head_lr_mult", "learning rate multiplier of the embedding head and textual path",
           [](RunConfig& c) -> double& { return c.train.sgd.head_lr_mult; }),
      real("lambda_cls", "class loss weight", [](RunConfig& c) -> double& { return c.train.weights.lambda_cls; }),
      real("lambda_cpt", "concepts loss weight", [](RunConfig& c) -> double& { return c.train.weights.lambda_cpt; }),
      real("lambda_ac", "auto-consistency loss weight", [](RunConfig& c) -> double& { return c.train.weights.lambda_ac; }),
      real("w_res", "residual weight of the textual path", [](RunConfig& c) -> double& { return c.train.w_res; }),
      real("alpha", "background exponent", [](RunConfig& c) -> double& { return c.alpha; }),
      ConfigKey{"ac_form", "auto-consistency form: log_sigmoid | cross_entropy",
                [](RunConfig& c, const std::string& v) {
                  if (v == "log_sigmoid") c.train.ac.form = AcForm::LogSigmoidOfSoftmax;
                  else if (v == "cross_entropy") c.train.ac.form = AcForm::CrossEntropy;
                  else fail(Errc::InvalidConfig, "ac_form: expected log_sigmoid or cross_entropy, got '" + v + "'");
                },
                [](const RunConfig& c) {
                  return std::string(c.train.ac.form == AcForm::CrossEntropy ? "cross_entropy" : "log_sigmoid");
                }},
      ConfigKey{"concept_types", "concepts used by the concepts loss: all | class_related",
                [](RunConfig& c, const std::string& v) {
                  if (v == "all") c.train.concepts.types = ConceptTypes::AllCompounds;
                  else if (v == "class_related") c.train.concepts.types = ConceptTypes::ClassRelatedOnly;
                  else fail(Errc::InvalidConfig, "concept_types: expected all or class_related, got '" + v + "'");
                },
                [](const RunConfig& c) {
                  return std::string(c.train.concepts.types == ConceptTypes::ClassRelatedOnly ? "class_related" : "all");
                }},
      count("max_present", "present compounds per image", [](RunConfig& c) -> std::size_t& { return c.train.concepts.max_present; }),
      count("contrastive_images", "images drawn for contrastive compounds",
            [](RunConfig& c) -> std::size_t& { return c.train.concepts.contrastive_images; }),
      count("max_contrastive", "contrastive compounds per image",
            [](RunConfig& c) -> std::size_t& { return c.train.concepts.max_contrastive; }),
      real("scale_min", "smallest augmentation scale", [](RunConfig& c) -> double& { return c.train.augment.scale_min; }),
      real("scale_max", "largest augmentation scale", [](RunConfig& c) -> double& { return c.train.augment.scale_max; }),
      count("crop", "crop size, 0 for the input size", [](RunConfig& c) -> std::size_t& { return c.train.augment.crop; }),
      real("mirror", "mirror probability", [](RunConfig& c) -> double& { return c.train.augment.mirror_probability; }),
      ConfigKey{"encoder_hidden", "hidden channel counts, comma separated",
                [](RunConfig& c, const std::string& v) {
                  auto hidden = detail::parse_list("encoder_hidden", v);
                  const auto in = c.train.encoder.channels.front(), out = c.train.encoder.channels.back();
                  hidden.insert(hidden.begin(), in);
                  hidden.push_back(out);
                  c.train.encoder.channels = hidden;
                },
                [](const RunConfig& c) {
                  const auto& ch = c.train.encoder.channels;
                  return detail::format_list({ch.begin() + 1, ch.end() - 1});
                }},
      ConfigKey{"encoder_dilations", "dilation per hidden layer, comma separated, empty for all 1",
                [](RunConfig& c, const std::string& v) {
                  c.train.encoder.dilations = detail::parse_list("encoder_dilations", v);
                },
                [](const RunConfig& c) { return detail::format_list(c.train.encoder.dilations); }},
      count("encoder_kernel", "kernel size of hidden layers", [](RunConfig& c) -> std::size_t& { return c.train.encoder.kernel; }),
      real("input_offset", "subtracted from pixel values", [](RunConfig& c) -> double& { return c.train.encoder.input_offset; }),
  };
  return keys;
}

inline const ConfigKey* find_config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto* k = find_config_key(key);
  if (!k) fail(Errc::InvalidConfig, "unknown config key '" + key + "'");
  k->set(cfg, value);
}

inline void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(Errc::InvalidConfig, source + ":" + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    try {
      set_config_value(cfg, key, detail::trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      fail(Errc::InvalidConfig, source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open config " + path.string());
  apply_config_text(cfg, in, path.string());
}

inline std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

/// Syncs the embedding dimension into the encoder and validates.
inline void finalize_config(RunConfig& cfg, std::size_t embedding_dim) {
  cfg.train.encoder.channels.back() = embedding_dim;
  cfg.train.validate();
  if (!(cfg.alpha > 0.0)) fail(Errc::InvalidConfig, "alpha must be positive");
}

}  // namespace tamkit
