#include "embkit/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "embkit/curation.hpp"
#include "embkit/datamodel.hpp"
#include "embkit/encoder.hpp"
#include "embkit/error.hpp"
#include "embkit/evalsuite.hpp"
#include "embkit/external_encoder.hpp"
#include "embkit/synth.hpp"
#include "embkit/text.hpp"
#include "embkit/trainer.hpp"

namespace embkit::cli {
namespace fs = std::filesystem;

namespace {

// Flag combinations CLI11 cannot express; reported as usage errors.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

OrderedJson path_list(const std::vector<fs::path>& paths) {
  OrderedJson a = OrderedJson::array();
  for (const auto& p : paths) a.push_back(p.string());
  return a;
}

// manifest.json: written before any output, rewritten with the end time and
// status when the command finishes. The only file carrying timestamps.
class Manifest {
 public:
  Manifest(fs::path dir, std::string subcommand, OrderedJson config, std::uint64_t seed,
           const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs)
      : path_(std::move(dir) / "manifest.json") {
    body_ = OrderedJson{{"subcommand", std::move(subcommand)},
                        {"config", std::move(config)},
                        {"seed", seed},
                        {"inputs", path_list(inputs)},
                        {"outputs", path_list(outputs)},
                        {"tool_version", kVersion},
                        {"started_at", utc_now()},
                        {"finished_at", nullptr},
                        {"status", "running"}};
    fs::create_directories(path_.parent_path());
    flush();
  }

  void finish(const std::string& status) {
    body_["finished_at"] = utc_now();
    body_["status"] = status;
    flush();
  }

 private:
  void flush() const { write_file(path_, body_.dump(2) + "\n"); }

  fs::path path_;
  OrderedJson body_;
};

std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value) {
  if (opt->count() > 0) return flag_value;
  if (const char* env = std::getenv("EMBKIT_SEED")) {
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(env, &pos);
      if (pos == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("EMBKIT_SEED is not an unsigned integer: ") + env);
  }
  return 0;
}

std::map<std::string, std::string> read_instructions(const fs::path& path) {
  try {
    const Json j = Json::parse(read_file(path));
    return j.get<std::map<std::string, std::string>>();
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": instruction map must be a JSON object of strings: " + e.what());
  }
}

// ---------------------------------------------------------------- curate

struct CurateArgs {
  std::vector<std::string> inputs;
  std::string output;
  double threshold = 0.43;
  std::string scorer = "overlap";
  std::size_t min_chars = 4;
  std::size_t max_chars = 8192;
  double min_informative = 0.5;
  std::string blocklist;
  bool no_dedup = false;
  unsigned jobs = 1;
};

int cmd_curate(const CurateArgs& a, std::ostream& out) {
  curation::FilterConfig cfg;
  cfg.semantic_threshold = a.threshold;
  cfg.min_chars = a.min_chars;
  cfg.max_chars = a.max_chars;
  cfg.min_informative_ratio = a.min_informative;
  cfg.dedup = !a.no_dedup;
  cfg.jobs = a.jobs;
  if (a.min_chars > a.max_chars) throw UsageError("--min-chars must not exceed --max-chars");

  std::unique_ptr<EncoderHandle> scorer_encoder;
  if (a.scorer == "overlap") {
    cfg.scorer = std::make_shared<curation::OverlapScorer>();
  } else if (a.scorer.rfind("encoder:", 0) == 0) {
    scorer_encoder = std::make_unique<encoder::ModelEncoder>(encoder::load_model(a.scorer.substr(8)));
  } else if (a.scorer.rfind("external:", 0) == 0) {
    scorer_encoder = std::make_unique<encoder::ExternalEncoder>(encoder::ExternalConfig{a.scorer.substr(9)});
  } else {
    throw UsageError("--scorer must be overlap, encoder:PATH or external:CMD");
  }
  if (scorer_encoder) cfg.scorer = std::make_shared<curation::EncoderScorer>(*scorer_encoder);
  if (!a.blocklist.empty()) {
    std::istringstream in(read_file(a.blocklist));
    for (std::string line; std::getline(in, line);) {
      if (!text::trim(line).empty()) cfg.blocklist.push_back(line);
    }
  }

  const fs::path output(a.output);
  const fs::path report_path(a.output + ".report.json");
  std::vector<fs::path> inputs(a.inputs.begin(), a.inputs.end());
  OrderedJson config{{"threshold", cfg.semantic_threshold}, {"scorer", a.scorer},
                     {"min_chars", cfg.min_chars},          {"max_chars", cfg.max_chars},
                     {"min_informative_ratio", cfg.min_informative_ratio},
                     {"dedup", cfg.dedup},                  {"blocklist", a.blocklist},
                     {"jobs", cfg.jobs}};
  const fs::path dir = output.has_parent_path() ? output.parent_path() : fs::path(".");
  Manifest manifest(dir, "curate", config, 0, inputs, {output, report_path});
  const curation::CurationReport report = curation::run_pipeline(inputs, cfg, output);
  write_file(report_path, report.to_json().dump(2) + "\n");
  manifest.finish("ok");
  out << "curated " << report.raw << " pairs -> " << report.after_general << " after general filter -> "
      << report.after_semantic << " kept\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string stage = "all";
  std::string data;
  std::string corpus, pairs, labeled;
  std::string init;
  std::string out;
  std::string instructions;
  std::size_t batch_size = 0;
  double temperature = 0.0;
  double lr = 0.0;
  double pretrain_lr = 0.0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  double mask_ratio = 0.0;
  std::size_t rank_lo = 0, rank_hi = 0;
  std::size_t remine_every = 0;
  std::uint32_t vocab = 32768;
  std::uint32_t dim = 64;
  const CLI::App* app = nullptr;
};

bool given(const CLI::App* app, const char* name) { return app->get_option(name)->count() > 0; }

train::TrainConfig stage_config(const TrainArgs& a, train::Stage stage, std::uint64_t seed,
                                const std::map<std::string, std::string>& instructions) {
  train::TrainConfig c = train::default_config(stage);
  c.seed = seed;
  if (given(a.app, "--batch-size")) c.batch_size = a.batch_size;
  if (given(a.app, "--temperature")) c.temperature = a.temperature;
  if (given(a.app, "--lr")) c.learning_rate = a.lr;
  if (stage == train::Stage::Pretrain && given(a.app, "--pretrain-lr")) c.learning_rate = a.pretrain_lr;
  if (given(a.app, "--steps")) c.steps = a.steps;
  if (given(a.app, "--mask-ratio")) c.mask_ratio = a.mask_ratio;
  if (given(a.app, "--rank-lo")) c.rank_lo = a.rank_lo;
  if (given(a.app, "--rank-hi")) c.rank_hi = a.rank_hi;
  if (given(a.app, "--remine-every")) c.remine_every = a.remine_every;
  if (stage == train::Stage::TaskSpecific) c.instructions = instructions;
  train::validate(c);
  return c;
}

int cmd_train(const TrainArgs& a, std::uint64_t seed, std::ostream& out) {
  const bool all = a.stage == "all";
  const std::optional<train::Stage> single = all ? std::nullopt : train::parse_stage(a.stage);
  if (!all && !single) throw UsageError("--stage must be pretrain, general, taskspecific or all");
  auto wants = [&](train::Stage s) { return all || *single == s; };

  // Input resolution: explicit per-kind flags, then --data (a directory of
  // corpus/unlabeled/labeled files, or the single stage's file).
  const fs::path data(a.data);
  const bool data_dir = !a.data.empty() && fs::is_directory(data);
  auto input_for = [&](const std::string& explicit_path, const char* file, train::Stage s) -> fs::path {
    if (!explicit_path.empty()) return explicit_path;
    if (data_dir) return data / file;
    if (!a.data.empty() && !all && *single == s) return data;
    throw UsageError(std::string("no input for stage ") + std::string(train::stage_name(s)) +
                     ": pass --data or the matching --corpus/--pairs/--labeled flag");
  };
  std::optional<fs::path> corpus_path, pairs_path, labeled_path;
  if (wants(train::Stage::Pretrain)) corpus_path = input_for(a.corpus, "corpus.jsonl", train::Stage::Pretrain);
  if (wants(train::Stage::General)) pairs_path = input_for(a.pairs, "unlabeled.jsonl", train::Stage::General);
  if (wants(train::Stage::TaskSpecific)) {
    labeled_path = input_for(a.labeled, "labeled.jsonl", train::Stage::TaskSpecific);
  }

  std::map<std::string, std::string> instructions;
  std::optional<fs::path> instructions_path;
  if (wants(train::Stage::TaskSpecific)) {
    if (!a.instructions.empty()) {
      instructions_path = a.instructions;
    } else if (data_dir && fs::exists(data / "instructions.json")) {
      instructions_path = data / "instructions.json";
    } else {
      throw Error("task-specific training needs an instruction map: pass --instructions FILE");
    }
    instructions = read_instructions(*instructions_path);
  }

  auto config_for = [&](train::Stage s, const std::map<std::string, std::string>& instr) {
    return wants(s) ? stage_config(a, s, seed, instr) : train::default_config(s);
  };
  train::RecipeConfigs cfgs{config_for(train::Stage::Pretrain, {}), config_for(train::Stage::General, {}),
                            config_for(train::Stage::TaskSpecific, instructions)};

  std::vector<fs::path> inputs;
  for (const auto* p : {&corpus_path, &pairs_path, &labeled_path, &instructions_path}) {
    if (*p) inputs.push_back(**p);
  }
  if (!a.init.empty()) inputs.push_back(a.init);

  const fs::path out_dir(a.out);
  std::vector<fs::path> outputs;
  OrderedJson config = OrderedJson::object();
  config["stage"] = a.stage;
  config["model_shape"] = {{"vocab_buckets", a.vocab}, {"embed_dim", a.dim}, {"out_dim", a.dim}};
  const std::pair<train::Stage, const char*> names[] = {
      {train::Stage::Pretrain, "pretrain"}, {train::Stage::General, "general"}, {train::Stage::TaskSpecific, "finetune"}};
  for (const auto& [s, name] : names) {
    if (!wants(s)) continue;
    const train::TrainConfig& c = s == train::Stage::Pretrain ? cfgs.pretrain
                                  : s == train::Stage::General ? cfgs.general
                                                                : cfgs.taskspecific;
    config[std::string(train::stage_name(s))] = train::to_json(c);
    outputs.push_back(out_dir / (std::string(name) + ".embm"));
    outputs.push_back(out_dir / ("loss_" + std::string(name) + ".csv"));
  }

  // Load everything before the manifest so bad inputs leave no partial output.
  encoder::EncoderModel init = a.init.empty()
                                   ? encoder::EncoderModel::initialize({a.vocab, a.dim, a.dim}, seed)
                                   : encoder::load_model(a.init);
  std::vector<std::string> corpus;
  std::vector<TextPair> pairs;
  std::vector<train::LabeledTaskPair> labeled;
  if (corpus_path) corpus = synth::read_corpus(*corpus_path);
  if (pairs_path) pairs = read_text_pairs(*pairs_path);
  if (labeled_path) labeled = train::read_labeled_pairs(*labeled_path);

  Manifest manifest(out_dir, "train", config, seed, inputs, outputs);
  if (all) {
    const train::RecipeResult r = train::run_recipe(init, corpus, pairs, labeled, cfgs, out_dir);
    out << "trained pretrain/general/finetune: final losses "
        << (r.pretrain_curve.losses.empty() ? 0.0 : r.pretrain_curve.losses.back()) << " "
        << (r.general_curve.losses.empty() ? 0.0 : r.general_curve.losses.back()) << " "
        << (r.finetune_curve.losses.empty() ? 0.0 : r.finetune_curve.losses.back()) << "\n";
  } else {
    train::TrainResult r{init, {}};
    const char* name = "general";
    const train::TrainConfig* cfg = &cfgs.general;
    switch (*single) {
      case train::Stage::Pretrain:
        r = train::pretrain(std::move(init), corpus, cfgs.pretrain);
        name = "pretrain";
        cfg = &cfgs.pretrain;
        break;
      case train::Stage::General:
        r = train::train_general(std::move(init), pairs, cfgs.general);
        break;
      case train::Stage::TaskSpecific:
        r = train::train_taskspecific(std::move(init), labeled, cfgs.taskspecific);
        name = "finetune";
        cfg = &cfgs.taskspecific;
        break;
    }
    train::save_checkpoint(r.model, *cfg, out_dir / (std::string(name) + ".embm"));
    r.curve.write_csv(out_dir / ("loss_" + std::string(name) + ".csv"));
    out << "trained " << a.stage << ": " << r.curve.losses.size() << " steps";
    if (!r.curve.losses.empty()) out << ", final loss " << r.curve.losses.back();
    out << "\n";
  }
  manifest.finish("ok");
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string tasks;
  std::string model;
  std::string external;
  int timeout_ms = 60000;
  std::string out;
  std::size_t k = 10;
  unsigned jobs = 1;
  std::uint64_t seed = 0;
  std::string instructions;
  bool no_instructions = false;
};

// Instructions recorded with a task-specific checkpoint; earlier stages carry none.
std::map<std::string, std::string> checkpoint_instructions(const fs::path& model) {
  const fs::path side(model.string() + ".json");
  if (!fs::exists(side)) return {};
  try {
    const Json j = Json::parse(read_file(side));
    auto it = j.find("train_config");
    if (it == j.end()) return {};
    const train::TrainConfig cfg = train::train_config_from_json(*it);
    return cfg.stage == train::Stage::TaskSpecific ? cfg.instructions : std::map<std::string, std::string>{};
  } catch (const Json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
}

int cmd_eval(const EvalArgs& a, std::uint64_t seed, std::ostream& out) {
  if (a.model.empty() == a.external.empty()) throw UsageError("pass exactly one of --model or --external");
  if (a.k < 1) throw UsageError("--k must be >= 1");

  eval::EvalConfig cfg;
  cfg.k = a.k;
  cfg.seed = seed;
  cfg.jobs = a.jobs;
  std::string instruction_source = "none";
  if (!a.no_instructions) {
    if (!a.instructions.empty()) {
      cfg.instructions = read_instructions(a.instructions);
      instruction_source = a.instructions;
    } else if (!a.model.empty()) {
      cfg.instructions = checkpoint_instructions(a.model);
      if (!cfg.instructions.empty()) instruction_source = "checkpoint";
    }
  }

  const eval::TaskList tasks = eval::discover_tasks(a.tasks);
  std::unique_ptr<EncoderHandle> enc;
  if (!a.model.empty()) {
    enc = std::make_unique<encoder::ModelEncoder>(encoder::load_model(a.model));
  } else {
    enc = std::make_unique<encoder::ExternalEncoder>(encoder::ExternalConfig{a.external, a.timeout_ms});
  }

  const fs::path out_dir(a.out);
  std::vector<fs::path> outputs{out_dir / "report.json"};
  for (const auto& e : tasks.entries()) outputs.push_back(out_dir / (e.dataset.name + ".json"));
  OrderedJson config{{"tasks", a.tasks},
                     {"encoder", a.model.empty() ? "external:" + a.external : a.model},
                     {"k", cfg.k},
                     {"jobs", cfg.jobs},
                     {"instructions", instruction_source}};
  std::vector<fs::path> inputs{fs::path(a.tasks)};
  if (!a.model.empty()) inputs.push_back(a.model);
  Manifest manifest(out_dir, "eval", config, seed, inputs, outputs);
  const EvaluationReport report = eval::run_suite(tasks, *enc, cfg, out_dir);

  std::size_t failed = 0;
  for (const auto& row : report.per_dataset) {
    if (row.failed) {
      ++failed;
      out << row.dataset << ": FAILED (" << row.error << ")\n";
    } else {
      out << row.dataset << ": " << row.metric << " = " << row.score << "\n";
    }
  }
  out << "overall average = " << report.overall_average << "\n";
  manifest.finish(failed == 0 ? "ok" : "partial");
  return failed == 0 ? kOk : kPartialFailure;
}

// ---------------------------------------------------------------- synth

int cmd_synth(const std::string& out_dir, std::uint64_t seed, std::size_t topics, std::size_t size, std::ostream& out) {
  const synth::SynthConfig cfg{seed, topics, size};
  try {
    synth::validate(cfg);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  const fs::path dir(out_dir);
  Manifest manifest(dir, "synth", OrderedJson{{"topics", topics}, {"size", size}}, seed, {},
                    {dir / "tasks", dir / "train"});
  const synth::Suite suite = synth::make_suite(cfg);
  synth::write_suite(suite, dir);
  manifest.finish("ok");
  out << "wrote " << suite.datasets.size() << " datasets and training files to " << dir.string() << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"embkit: curation, training and evaluation of text embedding models", "embkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CurateArgs ca;
  CLI::App* curate = app.add_subcommand("curate", "filter text pairs extracted from structured documents");
  curate->add_option("--input", ca.inputs, "input JSONL (structured documents or text pairs)")->required();
  curate->add_option("--output", ca.output, "output JSONL of kept pairs")->required();
  curate->add_option("--threshold", ca.threshold, "semantic threshold")->check(CLI::Range(0.0, 1.0));
  curate->add_option("--scorer", ca.scorer, "overlap | encoder:PATH | external:CMD");
  curate->add_option("--min-chars", ca.min_chars, "minimum code points per side");
  curate->add_option("--max-chars", ca.max_chars, "maximum code points per side");
  curate->add_option("--min-informative", ca.min_informative, "minimum informative character ratio")
      ->check(CLI::Range(0.0, 1.0));
  curate->add_option("--blocklist", ca.blocklist, "file with one blocked term per line");
  curate->add_flag("--no-dedup", ca.no_dedup, "keep exact duplicates");
  curate->add_option("--jobs", ca.jobs, "scoring threads")->check(CLI::Range(1U, 256U));

  TrainArgs ta;
  CLI::App* trainc = app.add_subcommand("train", "run one training stage or the full recipe");
  ta.app = trainc;
  trainc->add_option("--stage", ta.stage, "pretrain | general | taskspecific | all")
      ->check(CLI::IsMember({"pretrain", "general", "taskspecific", "all"}));
  trainc->add_option("--data", ta.data, "training directory or the stage's input file");
  trainc->add_option("--corpus", ta.corpus, "plain-text JSONL for pre-training");
  trainc->add_option("--pairs", ta.pairs, "text-pair JSONL for general training");
  trainc->add_option("--labeled", ta.labeled, "labeled pair JSONL for task-specific training");
  trainc->add_option("--init", ta.init, "checkpoint to start from");
  trainc->add_option("--out", ta.out, "output directory")->required();
  trainc->add_option("--instructions", ta.instructions, "JSON map task tag -> instruction");
  trainc->add_option("--batch-size", ta.batch_size)->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));
  trainc->add_option("--temperature", ta.temperature)->check(CLI::PositiveNumber);
  trainc->add_option("--lr", ta.lr, "learning rate for every stage")->check(CLI::NonNegativeNumber);
  trainc->add_option("--pretrain-lr", ta.pretrain_lr, "learning rate for pre-training only")
      ->check(CLI::NonNegativeNumber);
  trainc->add_option("--steps", ta.steps);
  CLI::Option* train_seed = trainc->add_option("--seed", ta.seed);
  trainc->add_option("--mask-ratio", ta.mask_ratio)->check(CLI::Range(0.0, 1.0));
  trainc->add_option("--rank-lo", ta.rank_lo)->check(CLI::Range(std::size_t{1}, std::size_t{1} << 30));
  trainc->add_option("--rank-hi", ta.rank_hi)->check(CLI::Range(std::size_t{1}, std::size_t{1} << 30));
  trainc->add_option("--remine-every", ta.remine_every);
  trainc->add_option("--vocab", ta.vocab, "hash buckets for a fresh model")->check(CLI::Range(2U, 1U << 24));
  trainc->add_option("--dim", ta.dim, "embedding width for a fresh model")->check(CLI::Range(1U, 4096U));

  EvalArgs ea;
  CLI::App* evalc = app.add_subcommand("eval", "evaluate an encoder on a task directory");
  evalc->add_option("--tasks", ea.tasks, "directory of <name>.<kind>.jsonl datasets")->required();
  evalc->add_option("--model", ea.model, "checkpoint");
  evalc->add_option("--external", ea.external, "command speaking the line protocol");
  evalc->add_option("--timeout-ms", ea.timeout_ms, "external encoder response timeout")
      ->check(CLI::Range(1, 86400000));
  evalc->add_option("--out", ea.out, "output directory")->required();
  evalc->add_option("--k", ea.k, "retrieval cutoff");
  evalc->add_option("--jobs", ea.jobs, "datasets evaluated in parallel")->check(CLI::Range(1U, 256U));
  CLI::Option* eval_seed = evalc->add_option("--seed", ea.seed);
  evalc->add_option("--instructions", ea.instructions, "JSON map task tag -> instruction");
  evalc->add_flag("--no-instructions", ea.no_instructions, "ignore instructions stored with the checkpoint");

  std::string synth_out;
  std::uint64_t synth_seed = 0;
  std::size_t topics = 8;
  std::size_t size = 64;
  CLI::App* synthc = app.add_subcommand("synth", "generate the synthetic benchmark and training files");
  synthc->add_option("--out", synth_out, "output directory")->required();
  CLI::Option* synth_seed_opt = synthc->add_option("--seed", synth_seed);
  synthc->add_option("--topics", topics);
  synthc->add_option("--size", size);

  std::string serve_model;
  CLI::App* servec = app.add_subcommand("serve", "answer the external-encoder protocol on stdin/stdout");
  servec->group("");
  servec->add_option("--model", serve_model)->required();

  std::vector<char*> argv;
  std::vector<std::string> storage(args);
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*curate) return cmd_curate(ca, out);
    if (*trainc) return cmd_train(ta, resolve_seed(train_seed, ta.seed), out);
    if (*evalc) return cmd_eval(ea, resolve_seed(eval_seed, ea.seed), out);
    if (*synthc) return cmd_synth(synth_out, resolve_seed(synth_seed_opt, synth_seed), topics, size, out);
    if (*servec) {
      const encoder::ModelEncoder enc(encoder::load_model(serve_model));
      encoder::serve(enc, std::cin, std::cout);
      return kOk;
    }
  } catch (const UsageError& e) {
    err << "embkit: usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "embkit: error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace embkit::cli
