#include "wmnet/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "wmnet/checkpoint.hpp"
#include "wmnet/dataset.hpp"
#include "wmnet/error.hpp"
#include "wmnet/image_io.hpp"
#include "wmnet/metrics.hpp"
#include "wmnet/training.hpp"

namespace wmnet {
namespace {

namespace fs = std::filesystem;

struct TrainOptions {
  std::string data;
  std::string validation;
  std::string out;
  std::string log;
  std::string band = "LL";
  TrainingConfig config;
  bool no_attack_sim = false;
};

struct EmbedOptions {
  std::string model, image, watermark, out;
};

struct ExtractOptions {
  std::string model, image;
};

struct AttackOptions {
  std::string type, image, original, out;
  double p = 0.0;
  double sigma = 0.0;
  int quality = 0;
  std::uint64_t seed = 0;
};

struct EvaluateOptions {
  std::string model, data, report;
  std::uint64_t seed = 0;
};

struct SynthOptions {
  std::string out;
  std::size_t count = 8;
  std::uint64_t seed = 0;
};

BandId band_option(const std::string& text) {
  const auto band = parse_band(text);
  if (!band) throw Error(ErrorKind::Usage, "unknown band '" + text + "' (expected LL, LH, HL or HH)");
  return *band;
}

Tensor load_host(const std::string& path) {
  const Tensor image = load_image(path);
  return resize_to_256(image);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorKind::Io, path.string() + ": cannot open for writing");
  file << text;
  if (!file) throw Error(ErrorKind::Io, path.string() + ": write failed");
}

Dataset load_reported_dataset(const std::string& dir, std::ostream& err) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, dir + ": not a directory");
  Dataset data = load_dataset(dir);
  if (data.skipped_non_image + data.skipped_unreadable > 0) {
    err << "note: " << dir << ": skipped " << data.skipped_non_image << " non-image and "
        << data.skipped_unreadable << " unreadable files\n";
  }
  if (data.images.empty()) throw Error(ErrorKind::InvalidArgument, dir + ": no usable images");
  return data;
}

fs::path best_path(const fs::path& out) { return fs::path(out.string() + ".best"); }

void run_train(TrainOptions& o, std::ostream& out, std::ostream& err) {
  o.config.band = band_option(o.band);
  o.config.attack_simulator = !o.no_attack_sim;
  o.config.validate();
  const Dataset train = load_reported_dataset(o.data, err);
  std::vector<Tensor> validation;
  if (!o.validation.empty()) validation = load_reported_dataset(o.validation, err).images;

  std::optional<std::ofstream> log;
  if (!o.log.empty()) {
    log.emplace(o.log, std::ios::binary | std::ios::trunc);
    if (!*log) throw Error(ErrorKind::Io, o.log + ": cannot open for writing");
    *log << "epoch\tl1\tl2\tl3\tpsnr\tber\n";
  }
  const auto sink = [&](const TrainState& state, const EpochRecord& record, bool best) {
    const CheckpointMetadata meta{o.config, record};
    save_checkpoint(state, meta, o.out);
    if (best) save_checkpoint(state, meta, best_path(o.out));
  };
  const auto on_epoch = [&](const EpochRecord& record) {
    const std::string line = format_log_record(record);
    out << line << '\n' << std::flush;
    if (log) *log << line << '\n' << std::flush;
  };
  train_loop(o.config, train.images, validation, sink, on_epoch);
}

void run_embed(const EmbedOptions& o) {
  const WatermarkBits mark = from_hex(o.watermark);
  const Checkpoint ck = load_checkpoint(o.model);
  const Tensor host = load_host(o.image);
  const Tensor marked =
      embed_pipeline(host, mark, ck.state.params, PipelineConfig::for_band(ck.state.params.band));
  save_image(marked, o.out);
}

void run_extract(const ExtractOptions& o, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(o.model);
  const Tensor image = load_host(o.image);
  out << to_hex(extract_pipeline(image, ck.state.params,
                                 PipelineConfig::for_band(ck.state.params.band)))
      << '\n';
}

AttackSpec attack_spec(const AttackOptions& o, const CLI::App& cmd) {
  const auto kind = parse_attack_kind(o.type);
  if (!kind) throw Error(ErrorKind::Usage, "unknown attack type '" + o.type + "'");
  const bool has_p = cmd.count("--p") > 0;
  const bool has_sigma = cmd.count("--sigma") > 0;
  const bool has_quality = cmd.count("--quality") > 0;
  const auto reject = [&](bool present, const char* flag) {
    if (present) {
      throw Error(ErrorKind::Usage,
                  std::string(flag) + " does not apply to attack type '" + o.type + "'");
    }
  };
  AttackSpec spec;
  switch (*kind) {
    case AttackKind::None:
      reject(has_p, "--p");
      reject(has_sigma, "--sigma");
      reject(has_quality, "--quality");
      break;
    case AttackKind::SaltPepper:
    case AttackKind::Dropout: {
      reject(has_sigma, "--sigma");
      reject(has_quality, "--quality");
      const double p = has_p ? o.p : (*kind == AttackKind::SaltPepper ? 0.1 : 0.3);
      spec = *kind == AttackKind::SaltPepper ? AttackSpec::salt_pepper(p) : AttackSpec::dropout(p);
      break;
    }
    case AttackKind::Gaussian:
      reject(has_p, "--p");
      reject(has_quality, "--quality");
      spec = AttackSpec::gaussian(has_sigma ? o.sigma : 0.15);
      break;
    case AttackKind::Jpeg:
      reject(has_p, "--p");
      reject(has_sigma, "--sigma");
      spec = AttackSpec::jpeg(has_quality ? o.quality : 50);
      break;
  }
  if (*kind == AttackKind::Dropout && o.original.empty()) {
    throw Error(ErrorKind::Usage, "attack --type dropout needs --original (the host image)");
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::Usage, e.what());
  }
  return spec;
}

void run_attack(const AttackOptions& o, const CLI::App& cmd) {
  const AttackSpec spec = attack_spec(o, cmd);
  const Tensor image = load_image(o.image);
  Tensor original = image;
  if (!o.original.empty()) {
    original = load_image(o.original);
    if (original.shape() != image.shape()) {
      original = resize_bilinear(original, image.dim(0), image.dim(1));
    }
  }
  Rng rng(o.seed);
  save_image(apply_attack(spec, image, original, rng), o.out);
}

void run_evaluate(const EvaluateOptions& o, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(o.model);
  const Dataset data = load_reported_dataset(o.data, err);
  EvaluationConfig config;
  config.pipeline = PipelineConfig::for_band(ck.state.params.band);
  config.seed = o.seed;
  const EvaluationReport report = evaluate(ck.state.params, data.images, config);
  const std::string table = format_report_table(report);
  out << table;
  if (!o.report.empty()) {
    const fs::path path(o.report);
    write_text(path, path.extension() == ".json" ? report_to_json(report) : table);
  }
}

void run_synth(const SynthOptions& o) {
  if (o.count == 0) throw Error(ErrorKind::Usage, "--count must be positive");
  fs::create_directories(o.out);
  const auto images = synthetic_dataset(o.seed, o.count);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04zu.png", i);
    save_image(images[i], fs::path(o.out) / name);
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blind image watermarking with a DWT-domain CNN", "wmnet"};
  app.require_subcommand(1);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train embedder and extractor");
  train_cmd->add_option("--data", train.data, "Directory of training images")->required();
  train_cmd->add_option("--validation", train.validation,
                        "Directory of held-out images (default: first training images)");
  train_cmd->add_option("--epochs", train.config.epochs, "Number of epochs")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", train.config.batch_size, "Images per step");
  train_cmd->add_option("--lambda1", train.config.lambda1, "Image loss weight");
  train_cmd->add_option("--lambda2", train.config.lambda2, "Watermark loss weight");
  train_cmd->add_option("--lr", train.config.learning_rate, "Adam learning rate");
  train_cmd->add_option("--band", train.band, "Embedding subband: LL, LH, HL or HH");
  train_cmd->add_option("--seed", train.config.seed, "Seed for all randomness");
  train_cmd->add_flag("--no-attack-sim", train.no_attack_sim, "Disable the attack simulator");
  train_cmd->add_option("--out", train.out, "Checkpoint path (best model goes to <out>.best)")
      ->required();
  train_cmd->add_option("--log", train.log, "Write the per-epoch log here as well");

  EmbedOptions embed;
  auto* embed_cmd = app.add_subcommand("embed", "Embed a 256-bit watermark into an image");
  embed_cmd->add_option("--model", embed.model, "Checkpoint")->required();
  embed_cmd->add_option("--image", embed.image, "Host image")->required();
  embed_cmd->add_option("--watermark", embed.watermark, "64 hex digits")->required();
  embed_cmd->add_option("--out", embed.out, "Output image (.png, .ppm, .pgm)")->required();

  ExtractOptions extract;
  auto* extract_cmd = app.add_subcommand("extract", "Print the watermark hidden in an image");
  extract_cmd->add_option("--model", extract.model, "Checkpoint")->required();
  extract_cmd->add_option("--image", extract.image, "Watermarked image")->required();

  AttackOptions attack;
  auto* attack_cmd = app.add_subcommand("attack", "Apply one distortion to an image");
  attack_cmd->add_option("--type", attack.type, "none, salt-pepper, gaussian, jpeg or dropout")
      ->required();
  attack_cmd->add_option("--p", attack.p, "Probability (salt-pepper, dropout)");
  attack_cmd->add_option("--sigma", attack.sigma, "Noise standard deviation (gaussian)");
  attack_cmd->add_option("--quality", attack.quality, "JPEG quality 1-100");
  attack_cmd->add_option("--image", attack.image, "Input image")->required();
  attack_cmd->add_option("--original", attack.original, "Host image (required for dropout)");
  attack_cmd->add_option("--out", attack.out, "Output image")->required();
  attack_cmd->add_option("--seed", attack.seed, "Random seed");

  EvaluateOptions evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "PSNR and per-attack BER over a dataset");
  evaluate_cmd->add_option("--model", evaluate.model, "Checkpoint")->required();
  evaluate_cmd->add_option("--data", evaluate.data, "Directory of test images")->required();
  evaluate_cmd->add_option("--seed", evaluate.seed, "Seed for watermarks and attacks");
  evaluate_cmd->add_option("--report", evaluate.report,
                           "Also write the report here (JSON if the name ends in .json)");

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write procedural test images as PNG");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--count", synth.count, "Number of images");
  synth_cmd->add_option("--seed", synth.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "wmnet: usage error: " << e.what() << " (see --help)\n";
    return 2;
  }

  try {
    if (*train_cmd) run_train(train, out, err);
    if (*embed_cmd) run_embed(embed);
    if (*extract_cmd) run_extract(extract, out);
    if (*attack_cmd) run_attack(attack, *attack_cmd);
    if (*evaluate_cmd) run_evaluate(evaluate, out, err);
    if (*synth_cmd) run_synth(synth);
  } catch (const Error& e) {
    err << "wmnet: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return e.kind() == ErrorKind::Usage ? 2 : 1;
  } catch (const std::exception& e) {
    err << "wmnet: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace wmnet
