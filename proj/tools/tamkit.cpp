// tamkit command line: parse, generate, train, infer, eval.
// Exit codes: 0 ok, 2 bad input or config, 3 numeric failure during training.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tamkit/tamkit.hpp"

namespace fs = std::filesystem;
using namespace tamkit;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TAMKIT_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) n = std::min(n, static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      log_warning(std::string("ignoring TAMKIT_THREADS='") + env + "'");
    }
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// runs fn(i) for i in [0, n) on up to worker_count(n) threads; first error wins
template <class Fn>
void parallel_for(std::size_t n, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < worker_count(n); ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string slug(const std::string& text) {
  std::string out;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    out += std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_';
  }
  return out;
}

void require_path(const std::string& value, const std::string& what) {
  if (value.empty()) fail(Errc::InvalidConfig, what + " path is not set");
}

struct Resources {
  Lexicon lexicon;
  ClassVocabulary vocab;
  std::map<std::string, std::string> irregulars;
};

Resources load_resources(const std::string& vocab, const std::string& lexicon, const std::string& irregulars) {
  require_path(vocab, "vocab");
  require_path(lexicon, "lexicon");
  Resources r;
  if (!irregulars.empty()) r.irregulars = load_irregulars(irregulars);
  r.lexicon = Lexicon::load(lexicon);
  r.vocab = ClassVocabulary::load(vocab, r.irregulars);
  return r;
}

std::vector<ParsedImage> parse_corpus(const std::string& captions, const Resources& r) {
  require_path(captions, "captions");
  std::vector<ParsedImage> out;
  std::set<std::string> seen;
  for (const auto& rec : read_caption_corpus(captions)) {
    if (!seen.insert(rec.image_id).second) fail(Errc::MalformedLine, captions + ": duplicate image id '" + rec.image_id + "'");
    out.push_back(parse_captions(rec, r.vocab, r.lexicon));
  }
  return out;
}

// every captioned image must exist and every image must be captioned
std::vector<Image> load_images(const std::string& dir, const std::vector<ParsedImage>& parsed) {
  require_path(dir, "images");
  if (!fs::is_directory(dir)) fail(Errc::Io, "image directory " + dir + " does not exist");
  std::set<std::string> ids;
  for (const auto& p : parsed) ids.insert(p.image_id);
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".ppm" && !ids.count(entry.path().stem().string()))
      fail(Errc::DimMismatch, "image " + entry.path().string() + " has no captions");
  std::vector<Image> images;
  for (const auto& p : parsed) {
    const auto path = fs::path(dir) / (p.image_id + ".ppm");
    if (!fs::exists(path)) fail(Errc::DimMismatch, "no image " + path.string() + " for captioned id '" + p.image_id + "'");
    images.push_back(read_ppm(path));
  }
  return images;
}

nlohmann::json checkpoint_meta(const ClassVocabulary& vocab, std::size_t epoch) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& e : vocab.entries()) classes.push_back(e.name());
  return {{"classes", classes}, {"epochs_done", epoch}};
}

// ---- parse ----------------------------------------------------------------

struct ParseArgs {
  std::string captions, vocab, lexicon, irregulars, out;
};

int cmd_parse(const ParseArgs& a) {
  const auto r = load_resources(a.vocab, a.lexicon, a.irregulars);
  const auto parsed = parse_corpus(a.captions, r);
  std::string jsonl;
  std::vector<std::size_t> per_class(r.vocab.size(), 0);
  std::size_t untagged = 0;
  for (const auto& p : parsed) {
    jsonl += parsed_image_to_json(p, r.vocab).dump() + "\n";
    for (int c : p.tags) ++per_class[static_cast<std::size_t>(c)];
    untagged += p.tags.empty();
  }
  if (a.out.empty()) {
    std::cout << jsonl;
  } else {
    write_atomically(a.out, [&](std::ostream& o) { o << jsonl; });
  }
  std::cerr << "images " << parsed.size() << ", without tags " << untagged << "\n";
  for (std::size_t c = 0; c < per_class.size(); ++c)
    if (per_class[c]) std::cerr << "  " << r.vocab.entries()[c].name() << " " << per_class[c] << "\n";
  return 0;
}

// ---- generate -------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  std::size_t count = 64;
  std::uint64_t seed = 0;
  std::size_t size = 32;
  std::string prefix = "img";
};

int cmd_generate(const GenerateArgs& a) {
  SyntheticParams params;
  params.width = params.height = a.size;
  const auto samples = generate_synthetic_dataset(params, a.count, a.seed, a.prefix);
  fs::create_directories(fs::path(a.out) / "images");
  fs::create_directories(fs::path(a.out) / "gt");
  std::string jsonl;
  for (const auto& s : samples) {
    write_ppm(fs::path(a.out) / "images" / (s.id + ".ppm"), s.image);
    write_label_pgm(fs::path(a.out) / "gt" / (s.id + "_label.pgm"), s.ground_truth);
    jsonl += nlohmann::json{{"image_id", s.id}, {"captions", s.captions}}.dump() + "\n";
  }
  write_atomically(fs::path(a.out) / "captions.jsonl", [&](std::ostream& o) { o << jsonl; });
  const auto vocab = synthetic_vocabulary(params);
  write_atomically(fs::path(a.out) / "vocab.tsv", [&](std::ostream& o) {
    for (const auto& e : vocab.entries())
      o << e.class_id << '\t' << e.name() << '\t' << detail::join(e.plural) << '\n';
  });
  return 0;
}

// ---- train ----------------------------------------------------------------

int cmd_train(RunConfig cfg) {
  cfg.train.validate();
  const auto r = load_resources(cfg.vocab, cfg.lexicon, cfg.irregulars);
  require_path(cfg.embeddings, "embeddings");
  const auto table = EmbeddingTable::load(cfg.embeddings);
  finalize_config(cfg, table.dim());
  const auto parsed = parse_corpus(cfg.captions, r);
  const auto images = load_images(cfg.images, parsed);
  std::vector<TrainingExample> examples;
  for (std::size_t i = 0; i < parsed.size(); ++i) examples.push_back({images[i], parsed[i]});

  const fs::path out(cfg.output);
  fs::create_directories(out);
  write_atomically(out / "config.txt", [&](std::ostream& o) { o << config_to_text(cfg); });
  const auto ckpt = out / "checkpoint.bin";
  {
    // the untrained model is the first "last good" checkpoint
    Rng rng(cfg.train.seed);
    auto init = init_model(cfg.train, rng);
    save_checkpoint(ckpt, init, checkpoint_meta(r.vocab, 0));
  }
  std::ofstream log(out / "train_log.csv");
  if (!log) fail(Errc::Io, "cannot write " + (out / "train_log.csv").string());
  log << "step,epoch,lr,loss_cls,loss_cpt,loss_ac,loss_total\n";
  char line[256];
  SnippetEncoder encoder(table, r.lexicon);
  try {
    train(examples, r.vocab, encoder, cfg.train,
          [&](const StepLog& s) {
            std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.step, s.epoch, s.lr,
                          s.parts.cls, s.parts.cpt, s.parts.ac, s.total);
            log << line << std::flush;
          },
          [&](const Model& m, std::size_t epoch) {
            auto copy = m;
            save_checkpoint(ckpt, copy, checkpoint_meta(r.vocab, epoch + 1));
            std::cerr << "epoch " << epoch + 1 << "/" << cfg.train.epochs << " done\n";
          });
  } catch (const Error& e) {
    if (e.code() == Errc::NonFiniteLoss || e.code() == Errc::NonFiniteUpdate)
      std::cerr << "training stopped: " << e.what() << "; " << ckpt.string() << " holds the last good model\n";
    throw;
  }
  return 0;
}

// ---- infer ----------------------------------------------------------------

struct InferArgs {
  std::string config, checkpoint, out;
  RunConfig paths;
  std::optional<double> alpha;
  bool dump_tams = false;
};

int cmd_infer(InferArgs a) {
  RunConfig cfg;
  if (!a.config.empty()) apply_config_file(cfg, a.config);
  for (auto [field, value] : {std::pair{&RunConfig::captions, a.paths.captions}, {&RunConfig::images, a.paths.images},
                              {&RunConfig::vocab, a.paths.vocab}, {&RunConfig::lexicon, a.paths.lexicon},
                              {&RunConfig::irregulars, a.paths.irregulars}, {&RunConfig::embeddings, a.paths.embeddings}})
    if (!value.empty()) cfg.*field = value;
  if (a.alpha) cfg.alpha = *a.alpha;
  if (!(cfg.alpha > 0.0)) fail(Errc::InvalidConfig, "alpha must be positive");
  require_path(a.checkpoint, "checkpoint");
  require_path(a.out, "output");

  const auto model = load_checkpoint(a.checkpoint);
  const auto r = load_resources(cfg.vocab, cfg.lexicon, cfg.irregulars);
  require_path(cfg.embeddings, "embeddings");
  const auto table = EmbeddingTable::load(cfg.embeddings);
  if (table.dim() != model.text.dim)
    fail(Errc::DimMismatch, "checkpoint dim " + std::to_string(model.text.dim) + " != embedding dim " +
                                std::to_string(table.dim()));
  const auto parsed = parse_corpus(cfg.captions, r);
  const auto images = load_images(cfg.images, parsed);
  const fs::path out(a.out);
  fs::create_directories(out);
  SnippetEncoder encoder(table, r.lexicon);

  parallel_for(parsed.size(), [&](std::size_t i) {
    const auto& p = parsed[i];
    const auto res = infer_image(model, images[i], p, r.vocab, encoder, cfg.alpha, a.dump_tams);
    write_label_pgm(out / (p.image_id + "_label.pgm"), res.labels);
    for (const auto& c : res.cams)
      write_activation_pgm(out / (p.image_id + "_cam_" + slug(r.vocab.at(c.class_id).name()) + ".pgm"), c.map);
    std::set<std::string> written;
    for (const auto& [snippet, map] : res.tams) {
      const auto name = slug(snippet.text());
      if (written.insert(name).second) write_activation_pgm(out / (p.image_id + "_tam_" + name + ".pgm"), map);
    }
  });
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, vocab, irregulars, out;
  std::size_t num_classes = 0;
};

std::set<std::string> label_files(const std::string& dir) {
  if (!fs::is_directory(dir)) fail(Errc::Io, "directory " + dir + " does not exist");
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.size() > 10 && name.ends_with("_label.pgm")) names.insert(name);
  }
  return names;
}

int cmd_eval(const EvalArgs& a) {
  std::vector<std::string> names{"background"};
  std::size_t k = a.num_classes;
  if (!a.vocab.empty()) {
    std::map<std::string, std::string> irr;
    if (!a.irregulars.empty()) irr = load_irregulars(a.irregulars);
    const auto vocab = ClassVocabulary::load(a.vocab, irr);
    for (const auto& e : vocab.entries()) names.push_back(e.name());
    k = vocab.size();
  } else {
    if (k == 0) fail(Errc::InvalidConfig, "eval needs --vocab or --num-classes");
    for (std::size_t c = 0; c < k; ++c) names.push_back("class" + std::to_string(c));
  }
  const auto pred = label_files(a.pred), gt = label_files(a.gt);
  for (const auto& n : pred)
    if (!gt.count(n)) fail(Errc::DimMismatch, "prediction " + n + " has no ground truth in " + a.gt);
  for (const auto& n : gt)
    if (!pred.count(n)) fail(Errc::DimMismatch, "ground truth " + n + " has no prediction in " + a.pred);
  const std::vector<std::string> files(gt.begin(), gt.end());

  std::vector<ConfusionMatrix> per_image(files.size(), ConfusionMatrix(k));
  parallel_for(files.size(), [&](std::size_t i) {
    per_image[i].accumulate(read_label_pgm(fs::path(a.pred) / files[i]), read_label_pgm(fs::path(a.gt) / files[i]));
  });
  ConfusionMatrix cm(k);
  for (const auto& m : per_image) cm += m;
  const auto report = iou(cm, names);
  const auto text = to_text(report);
  std::cout << text;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    auto j = to_json(report);
    j["images"] = files.size();
    write_atomically(fs::path(a.out) / "metrics.json", [&](std::ostream& o) { o << j.dump(2) << '\n'; });
    write_atomically(fs::path(a.out) / "metrics.txt", [&](std::ostream& o) { o << text; });
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text activation maps from image captions"};
  app.require_subcommand(1);

  ParseArgs parse_args;
  auto* parse = app.add_subcommand("parse", "split captions into snippets and class tags");
  parse->add_option("--captions", parse_args.captions, "caption corpus (JSONL)")->required();
  parse->add_option("--vocab", parse_args.vocab, "class vocabulary TSV")->required();
  parse->add_option("--lexicon", parse_args.lexicon, "lexicon directory")->required();
  parse->add_option("--irregulars", parse_args.irregulars, "irregular plurals TSV");
  parse->add_option("--out", parse_args.out, "output JSONL (default stdout)");

  GenerateArgs gen_args;
  auto* gen = app.add_subcommand("generate", "write the synthetic shapes dataset");
  gen->add_option("--out", gen_args.out, "output directory")->required();
  gen->add_option("--count", gen_args.count, "number of images");
  gen->add_option("--seed", gen_args.seed, "random seed");
  gen->add_option("--size", gen_args.size, "canvas width and height");
  gen->add_option("--prefix", gen_args.prefix, "image id prefix");

  std::string config_path;
  std::map<std::string, std::string> overrides;
  auto* train_cmd = app.add_subcommand("train", "train the encoder and textual path");
  train_cmd->add_option("--config", config_path, "key = value config file");
  for (const auto& key : config_keys())
    train_cmd->add_option_function<std::string>(
        "--" + key.name, [&overrides, name = key.name](const std::string& v) { overrides[name] = v; }, key.help);

  InferArgs infer_args;
  double alpha = 0.0;
  auto* infer = app.add_subcommand("infer", "label maps and activation maps for captioned images");
  infer->add_option("--config", infer_args.config, "config file supplying defaults for the paths below");
  infer->add_option("--checkpoint", infer_args.checkpoint, "trained checkpoint")->required();
  infer->add_option("--images", infer_args.paths.images, "directory of {image_id}.ppm");
  infer->add_option("--captions", infer_args.paths.captions, "caption corpus (JSONL)");
  infer->add_option("--vocab", infer_args.paths.vocab, "class vocabulary TSV");
  infer->add_option("--lexicon", infer_args.paths.lexicon, "lexicon directory");
  infer->add_option("--irregulars", infer_args.paths.irregulars, "irregular plurals TSV");
  infer->add_option("--embeddings", infer_args.paths.embeddings, "word vector table");
  auto* alpha_opt = infer->add_option("--alpha", alpha, "background exponent");
  infer->add_option("--out", infer_args.out, "output directory")->required();
  infer->add_flag("--dump-tams", infer_args.dump_tams, "also write one map per snippet");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "compare predicted and ground-truth label maps");
  eval->add_option("--pred", eval_args.pred, "directory of predicted {id}_label.pgm")->required();
  eval->add_option("--gt", eval_args.gt, "directory of ground-truth {id}_label.pgm")->required();
  eval->add_option("--vocab", eval_args.vocab, "class vocabulary TSV (names and class count)");
  eval->add_option("--irregulars", eval_args.irregulars, "irregular plurals TSV");
  eval->add_option("--num-classes", eval_args.num_classes, "class count when no vocabulary is given");
  eval->add_option("--out", eval_args.out, "directory for metrics.json and metrics.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*parse) return cmd_parse(parse_args);
    if (*gen) return cmd_generate(gen_args);
    if (*train_cmd) {
      RunConfig cfg;
      if (!config_path.empty()) apply_config_file(cfg, config_path);
      for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
      return cmd_train(cfg);
    }
    if (*infer) {
      if (alpha_opt->count()) infer_args.alpha = alpha;
      return cmd_infer(infer_args);
    }
    if (*eval) return cmd_eval(eval_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::NonFiniteLoss || e.code() == Errc::NonFiniteUpdate ? kExitNumeric : kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return 0;
}
