#include "secap/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <ostream>

#include "secap/checkpoint.hpp"
#include "secap/errors.hpp"
#include "secap/model_check.hpp"
#include "secap/pipeline.hpp"
#include "secap/rten.hpp"
#include "secap/train.hpp"

namespace secap {

namespace {

namespace fs = std::filesystem;

// Raised for input that parses but cannot be used; maps to the usage code.
struct UsageError : Error {
  using Error::Error;
};

struct GenDataArgs {
  SynthConfig synth;
  std::string out;
};

struct ModelArgs {
  std::string preset = "toy";
  std::size_t prompt_len = 0;  // 0: preset default
  std::string variant = "attn";
  bool olp = false;
  std::string ablate = "none";
  std::uint64_t init_seed = 0;
};

struct TrainArgs {
  std::string manifest, out;
  ModelArgs model;
  TrainConfig train;
  std::string augment = "preset";
};

struct EvalArgs {
  std::string checkpoint, manifest, protocol = "all";
  std::size_t queries_per_view = 2;
};

struct GradCheckArgs {
  std::string variant = "attn";
  bool olp = false;
  std::string ablate = "none";
  std::uint64_t seed = 7;
  std::size_t coords = 4;
  double tolerance = 1e-4;
  std::string fault_op;
  double fault_factor = 1.0;
};

struct ExportArgs {
  std::string checkpoint, manifest, out, split = "test";
  std::size_t batch_size = 64;
};

Manifest load_manifest(const std::string& path) {
  // A missing file is an I/O problem, not a usage one.
  return read_manifest(fs::path(path));
}

ModelConfig model_config(const ModelArgs& a, const Manifest& m, std::size_t num_ids) {
  ModelConfig cfg;
  if (a.preset == "toy") {
    cfg = ModelConfig::toy(num_ids);
  } else if (a.preset == "vit-b") {
    cfg.num_ids = num_ids;
  } else {
    throw UsageError("unknown preset '" + a.preset + "' (expected toy|vit-b)");
  }
  cfg.encoder.channels = m.channels;
  cfg.encoder.image_h = m.height;
  cfg.encoder.image_w = m.width;
  cfg.encoder.olp = a.olp;
  if (a.prompt_len > 0) cfg.prompt_len = a.prompt_len;
  cfg.variant = parse_prm_variant(a.variant);
  cfg.ablation = Ablation::parse(a.ablate);
  cfg.seed = a.init_seed;
  cfg.num_views = std::max<std::size_t>(2, m.num_views);
  cfg.encoder.validate();
  return cfg;
}

std::unique_ptr<SecapModel<float>> open_checkpoint(const std::string& path, const Manifest& m) {
  std::unique_ptr<SecapModel<float>> model;
  try {
    model = load_model(path);
  } catch (const ConfigError& e) {
    throw IoError(std::string("incompatible checkpoint: ") + e.what());
  }
  const auto& e = model->config().encoder;
  if (e.channels != m.channels || e.image_h != m.height || e.image_w != m.width)
    throw IoError("checkpoint expects " + std::to_string(e.channels) + "x" + std::to_string(e.image_h) + "x" +
                  std::to_string(e.image_w) + " images, manifest has " + std::to_string(m.channels) + "x" +
                  std::to_string(m.height) + "x" + std::to_string(m.width));
  return model;
}

fs::path manifest_root(const std::string& manifest) { return fs::path(manifest).parent_path(); }

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const Manifest m = generate_synthetic(a.synth, a.out);
  out << (fs::path(a.out) / "manifest.tsv").string() << "\n";
  out << m.records.size() << " images\n";
  return kExitOk;
}

int cmd_train(TrainArgs a, bool p_given, std::ostream& out, std::ostream& err) {
  const Manifest m = load_manifest(a.manifest);
  const auto records = train_records(m);
  if (records.empty()) throw IoError("manifest " + a.manifest + " has no train/ records");
  const std::size_t num_ids = identity_labels(records).size();
  if (!p_given && a.train.p > num_ids) {
    err << "note: P lowered from " << a.train.p << " to the " << num_ids << " training identities\n";
    a.train.p = num_ids;
  }
  const ModelConfig cfg = model_config(a.model, m, num_ids);
  if (a.augment == "preset") {
    // The synthetic toy corpus encodes identity in colour and small shapes;
    // jitter and erasing wipe that signal out, so the toy preset trains clean.
    a.train.augment.enabled = a.model.preset != "toy";
  } else if (a.augment == "on" || a.augment == "off") {
    a.train.augment.enabled = a.augment == "on";
  } else {
    throw UsageError("--augment expects on|off");
  }
  a.train.out_dir = a.out;

  SecapModel<float> model(cfg);
  ImageCache cache(manifest_root(a.manifest));
  train(model, records, cache.loader(), a.train, &out);
  out << "checkpoint " << (fs::path(a.out) / "model.secap").string() << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<Protocol> protocols;
  if (a.protocol == "all")
    protocols = kAllProtocols;
  else
    protocols.push_back(parse_protocol(a.protocol));
  const Manifest m = load_manifest(a.manifest);
  const auto model = open_checkpoint(a.checkpoint, m);
  const auto test = test_records(m);
  ImageCache cache(manifest_root(a.manifest));
  for (const auto& r : evaluate_protocols(*model, test, cache.loader(), protocols, a.queries_per_view, &err))
    out << r.report.to_json() << "\n";
  return kExitOk;
}

int cmd_grad_check(const GradCheckArgs& a, std::ostream& out) {
  std::vector<PrmVariant> variants;
  if (a.variant == "all")
    variants = {PrmVariant::Attn, PrmVariant::Add, PrmVariant::Cat};
  else
    variants.push_back(parse_prm_variant(a.variant));
  if (!a.fault_op.empty()) set_backward_fault(a.fault_op, a.fault_factor);
  struct Reset {
    ~Reset() { set_backward_fault("", 1.0); }
  } reset;

  bool ok = true;
  for (PrmVariant v : variants) {
    ModelCheckOptions opts;
    opts.variant = v;
    opts.olp = a.olp;
    opts.ablation = Ablation::parse(a.ablate);
    opts.seed = a.seed;
    opts.coords_per_param = a.coords;
    const auto r = model_grad_check(opts);
    const bool pass = r.max_rel_error < a.tolerance;
    ok = ok && pass;
    char line[320];
    std::snprintf(line, sizeof line, "variant=%s olp=%d max_rel_error=%.3e worst=%s[%zu] coords=%zu %s",
                  std::string(to_string(v)).c_str(), a.olp ? 1 : 0, r.max_rel_error, r.worst_param.c_str(),
                  r.worst_index, r.coords_checked, pass ? "ok" : "FAILED");
    out << line << "\n";
  }
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_export(const ExportArgs& a, std::ostream& out) {
  const Manifest m = load_manifest(a.manifest);
  const auto model = open_checkpoint(a.checkpoint, m);
  std::vector<SampleRecord> records;
  if (a.split == "test")
    records = test_records(m);
  else if (a.split == "train")
    records = train_records(m);
  else if (a.split == "all")
    records = m.records;
  else
    throw UsageError("--split expects test|train|all");
  if (records.empty()) throw IoError("no records in split '" + a.split + "'");

  ImageCache cache(manifest_root(a.manifest));
  const FeatureSet feats = extract_features(*model, records, cache.loader(), a.batch_size);
  fs::path tensor_path(a.out);
  if (tensor_path.extension() != ".rten") tensor_path += ".rten";
  fs::path meta_path = tensor_path;
  meta_path.replace_extension(".tsv");
  if (tensor_path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(tensor_path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + tensor_path.parent_path().string() + ": " + ec.message());
  }
  write_rten(tensor_path, feats.features);
  std::ofstream meta(meta_path);
  if (!meta) throw IoError("cannot write " + meta_path.string());
  // One line per feature row: path, identity, camera, view.
  for (std::size_t i = 0; i < feats.size(); ++i)
    meta << feats.paths[i] << '\t' << feats.ids[i] << '\t' << feats.cameras[i] << '\t' << to_string(feats.views[i])
         << '\n';
  if (!meta) throw IoError("error writing " + meta_path.string());
  out << tensor_path.string() << " " << feats.features.dim(0) << "x" << feats.features.dim(1) << "\n";
  out << meta_path.string() << "\n";
  return kExitOk;
}

void add_model_flags(CLI::App* cmd, ModelArgs& a) {
  cmd->add_option("--preset", a.preset, "Architecture preset: toy (d=64, depth 2) or vit-b (d=768, depth 12)")
      ->check(CLI::IsMember({"toy", "vit-b"}));
  cmd->add_option("--prompt-len", a.prompt_len, "Prompt count L (default 8 toy, 64 vit-b)");
  cmd->add_option("--prm-variant", a.variant, "Prompt re-calibration: attn|add|cat")
      ->check(CLI::IsMember({"attn", "add", "cat"}));
  cmd->add_flag("--olp", a.olp, "Overlapping patches");
  cmd->add_option("--ablate", a.ablate, "none|no-prm|no-vdt|no-lfrm|baseline (comma list allowed)");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"SeCap aerial-ground person re-identification", "secap"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "secap 1.0");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic cross-view corpus and its manifest");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--ids", gen.synth.num_ids, "Identities");
  gen_cmd->add_option("--per-view", gen.synth.images_per_id_per_view, "Images per identity per view");
  gen_cmd->add_option("--views", gen.synth.num_views, "Views: 2 (aerial, ground) or 3 (adds ground-oblique)");
  gen_cmd->add_option("--height", gen.synth.height, "Image height");
  gen_cmd->add_option("--width", gen.synth.width, "Image width");
  gen_cmd->add_option("--seed", gen.synth.seed, "Corpus seed");
  gen_cmd->add_option("--view-strength", gen.synth.view_strength, "Strength of the per-view transform");
  gen_cmd->add_option("--test-fraction", gen.synth.test_fraction, "Share of identities held out for test");
  gen_cmd->add_option("--distractors", gen.synth.distractors, "Distractor images (identity -1) in the test split");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train on the train/ records of a manifest");
  train_cmd->add_option("--manifest", tr.manifest, "Manifest file")->required();
  train_cmd->add_option("--out", tr.out, "Output directory for model.secap")->required();
  add_model_flags(train_cmd, tr.model);
  train_cmd->add_option("--epochs", tr.train.epochs, "Epochs");
  train_cmd->add_option("--lr-max", tr.train.lr_max, "Initial learning rate");
  train_cmd->add_option("--lr-min", tr.train.lr_min, "Final learning rate");
  train_cmd->add_option("--warmup-steps", tr.train.warmup_steps, "Linear warmup steps");
  auto* p_opt = train_cmd->add_option("--p", tr.train.p, "Identities per batch");
  train_cmd->add_option("--k", tr.train.k, "Images per identity");
  train_cmd->add_option("--seed", tr.train.seed, "Sampling and augmentation seed");
  train_cmd->add_option("--alpha", tr.train.weights.alpha, "Global ID + triplet weight");
  train_cmd->add_option("--beta", tr.train.weights.beta, "Local ID + triplet weight");
  train_cmd->add_option("--lambda", tr.train.weights.lambda, "View + orthogonality weight");
  train_cmd->add_option("--momentum", tr.train.momentum, "SGD momentum");
  train_cmd->add_option("--weight-decay", tr.train.weight_decay, "SGD weight decay");
  train_cmd->add_option("--checkpoint-every", tr.train.checkpoint_every, "Checkpoint period in epochs");
  train_cmd->add_option("--augment", tr.augment, "on|off (default: off for toy, on for vit-b)");
  train_cmd->add_option("--init-seed", tr.model.init_seed, "Parameter initialization seed");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on the test/ records of a manifest");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest file")->required();
  eval_cmd->add_option("--protocol", ev.protocol, "a2g|g2a|g2ag|all")
      ->check(CLI::IsMember({"a2g", "g2a", "g2ag", "all"}));
  eval_cmd->add_option("--queries-per-view", ev.queries_per_view, "Representative queries per identity and view");

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference check of the full loss (micro config, double)");
  gc_cmd->add_option("--variant", gc.variant, "attn|add|cat|all")->check(CLI::IsMember({"attn", "add", "cat", "all"}));
  gc_cmd->add_flag("--olp", gc.olp, "Overlapping patches");
  gc_cmd->add_option("--ablate", gc.ablate, "Ablation, as for train");
  gc_cmd->add_option("--seed", gc.seed, "Seed for parameters, images and sampled coordinates");
  gc_cmd->add_option("--coords", gc.coords, "Coordinates sampled per parameter tensor (0 = all)");
  gc_cmd->add_option("--tolerance", gc.tolerance, "Pass threshold on the max relative error");
  gc_cmd->add_option("--fault-op", gc.fault_op, "Scale the backward rule of this op (negative control)");
  gc_cmd->add_option("--fault-factor", gc.fault_factor, "Scale factor for --fault-op");

  ExportArgs ex;
  auto* ex_cmd = app.add_subcommand("export-features", "Dump retrieval features and row metadata");
  ex_cmd->add_option("--checkpoint", ex.checkpoint, "Checkpoint file")->required();
  ex_cmd->add_option("--manifest", ex.manifest, "Manifest file")->required();
  ex_cmd->add_option("--out", ex.out, "Output .rten path; metadata goes next to it as .tsv")->required();
  ex_cmd->add_option("--split", ex.split, "test|train|all")->check(CLI::IsMember({"test", "train", "all"}));
  ex_cmd->add_option("--batch-size", ex.batch_size, "Images per forward pass");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(tr, p_opt->count() > 0, out, err);
    if (*eval_cmd) return cmd_eval(ev, out, err);
    if (*gc_cmd) return cmd_grad_check(gc, out);
    if (*ex_cmd) return cmd_export(ex, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ProtocolError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace secap
