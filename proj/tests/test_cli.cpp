#include <fstream>
#include <sstream>

#include "doctest.h"
#include "secap/checkpoint.hpp"
#include "secap/cli.hpp"
#include "secap/rten.hpp"

using namespace secap;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "secap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Shared 8-identity corpus and a one-epoch checkpoint.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "secap_test_cli";
  fs::path data = root / "d";
  fs::path manifest = data / "manifest.tsv";
  fs::path run = root / "run";
  fs::path ckpt = run / "model.secap";

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("gen-data") {
  auto& ws = workspace();
  const auto r = cli({"gen-data", "--ids", "8", "--seed", "1", "--out", ws.data.string()});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("manifest.tsv") != std::string::npos);
  std::size_t images = 0;
  for (const auto& e : fs::recursive_directory_iterator(ws.data)) images += e.path().extension() == ".rten";
  CHECK(images == 64);

  const auto again = cli({"gen-data", "--ids", "8", "--seed", "1", "--out", (ws.root / "d2").string()});
  REQUIRE(again.code == kExitOk);
  CHECK(slurp(ws.manifest) == slurp(ws.root / "d2" / "manifest.tsv"));
  for (const auto& e : fs::recursive_directory_iterator(ws.data))
    if (e.is_regular_file()) CHECK(slurp(e.path()) == slurp(ws.root / "d2" / fs::relative(e.path(), ws.data)));

  CHECK(cli({"gen-data", "--ids", "8"}).code == kExitUsage);
  CHECK(cli({"gen-data", "--out", (ws.root / "d3").string(), "--ids", "0"}).code == kExitUsage);
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);

  std::ofstream(ws.root / "file") << "x";
  CHECK(cli({"gen-data", "--out", (ws.root / "file" / "sub").string()}).code == kExitIo);
}

TEST_CASE("train") {
  auto& ws = workspace();
  const auto r = cli({"train", "--manifest", ws.manifest.string(), "--out", ws.run.string(), "--epochs", "1"});
  REQUIRE(r.code == kExitOk);
  const auto log = lines(r.out);
  REQUIRE(log.size() == 2);
  CHECK(log[0].rfind("epoch=1 loss_total=", 0) == 0);
  CHECK(log[0].find(" loss_orth=") != std::string::npos);
  CHECK(log[0].find(" lr=") != std::string::npos);
  CHECK(r.err.find("P lowered") != std::string::npos);

  CheckpointMeta meta;
  const auto model = load_model(ws.ckpt, &meta);
  CHECK(meta.epoch == 1);
  CHECK(meta.model.num_ids == 4);
  CHECK(meta.model.prompt_len == 8);
  CHECK(meta.model.encoder.embed_dim == 64);

  // Same flags, same bytes.
  const auto again = cli({"train", "--manifest", ws.manifest.string(), "--out", (ws.root / "run2").string(),
                          "--epochs", "1"});
  REQUIRE(again.code == kExitOk);
  CHECK(slurp(ws.ckpt) == slurp(ws.root / "run2" / "model.secap"));

  const auto variant = cli({"train", "--manifest", ws.manifest.string(), "--out", (ws.root / "run3").string(),
                            "--epochs", "1", "--prm-variant", "cat", "--olp", "--ablate", "no-vdt", "--prompt-len",
                            "4", "--lambda", "0.01", "--p", "2", "--k", "2"});
  REQUIRE(variant.code == kExitOk);
  CheckpointMeta vm;
  load_model(ws.root / "run3" / "model.secap", &vm);
  CHECK(vm.model.variant == PrmVariant::Cat);
  CHECK(vm.model.encoder.olp);
  CHECK_FALSE(vm.model.ablation.vdt);
  CHECK(vm.model.prompt_len == 4);
  CHECK(vm.weights.lambda == 0.01);

  CHECK(cli({"train", "--manifest", (ws.root / "missing.tsv").string(), "--out", ws.run.string()}).code == kExitIo);
  CHECK(cli({"train", "--manifest", ws.manifest.string()}).code == kExitUsage);
  CHECK(cli({"train", "--manifest", ws.manifest.string(), "--out", ws.run.string(), "--p", "9"}).code == kExitUsage);
  CHECK(cli({"train", "--manifest", ws.manifest.string(), "--out", ws.run.string(), "--prm-variant", "mul"}).code ==
        kExitUsage);
  CHECK(cli({"train", "--manifest", ws.manifest.string(), "--out", ws.run.string(), "--ablate", "no-x"}).code ==
        kExitUsage);

  const auto nan = cli({"train", "--manifest", ws.manifest.string(), "--out", (ws.root / "nan").string(), "--epochs",
                        "2", "--lr-max", "1e9", "--lr-min", "1e9"});
  CHECK(nan.code == kExitNumeric);
  CHECK(nan.err.find("step") != std::string::npos);
}

TEST_CASE("eval") {
  auto& ws = workspace();
  REQUIRE(fs::exists(ws.ckpt));
  const auto one = cli({"eval", "--checkpoint", ws.ckpt.string(), "--manifest", ws.manifest.string(), "--protocol",
                        "a2g"});
  REQUIRE(one.code == kExitOk);
  const auto report = lines(one.out);
  REQUIRE(report.size() == 1);
  CHECK(report[0].rfind("{\"protocol\": \"A->G\", \"rank1\": ", 0) == 0);
  CHECK(report[0].find("\"num_queries\": 8") != std::string::npos);

  const auto all = cli({"eval", "--checkpoint", ws.ckpt.string(), "--manifest", ws.manifest.string()});
  REQUIRE(all.code == kExitOk);
  const auto reports = lines(all.out);
  REQUIRE(reports.size() == 3);
  CHECK(reports[0] == report[0]);
  CHECK(reports[1].find("\"G->A\"") != std::string::npos);
  CHECK(reports[2].find("\"G->A+G\"") != std::string::npos);
  CHECK(cli({"eval", "--checkpoint", ws.ckpt.string(), "--manifest", ws.manifest.string()}).out == all.out);

  // Checkpoint trained for another image size.
  REQUIRE(cli({"gen-data", "--ids", "4", "--height", "32", "--width", "16", "--out", (ws.root / "small").string()})
              .code == kExitOk);
  CHECK(cli({"eval", "--checkpoint", ws.ckpt.string(), "--manifest", (ws.root / "small" / "manifest.tsv").string()})
            .code == kExitIo);
  // Checkpoint with a mangled parameter table.
  std::string bytes = slurp(ws.ckpt);
  bytes.resize(bytes.size() - 100);
  std::ofstream(ws.root / "cut.secap", std::ios::binary) << bytes;
  CHECK(cli({"eval", "--checkpoint", (ws.root / "cut.secap").string(), "--manifest", ws.manifest.string()}).code ==
        kExitIo);
  CHECK(cli({"eval", "--checkpoint", ws.ckpt.string(), "--manifest", ws.manifest.string(), "--protocol", "a2a"})
            .code == kExitUsage);
}

TEST_CASE("export-features") {
  auto& ws = workspace();
  REQUIRE(fs::exists(ws.ckpt));
  const auto out = ws.root / "feats" / "all";
  const auto r = cli({"export-features", "--checkpoint", ws.ckpt.string(), "--manifest", ws.manifest.string(), "--out",
                      out.string(), "--split", "all"});
  REQUIRE(r.code == kExitOk);
  const auto features = read_rten<float>(ws.root / "feats" / "all.rten");
  CHECK(features.shape() == Shape{64, 128});
  const auto meta = lines(slurp(ws.root / "feats" / "all.tsv"));
  CHECK(meta.size() == 64);
  CHECK(meta[0].find('\t') != std::string::npos);

  const auto first = slurp(ws.root / "feats" / "all.rten");
  REQUIRE(cli({"export-features", "--checkpoint", ws.ckpt.string(), "--manifest", ws.manifest.string(), "--out",
               out.string(), "--split", "all"})
              .code == kExitOk);
  CHECK(slurp(ws.root / "feats" / "all.rten") == first);

  const auto test_only = cli({"export-features", "--checkpoint", ws.ckpt.string(), "--manifest", ws.manifest.string(),
                              "--out", (ws.root / "feats" / "test.rten").string()});
  REQUIRE(test_only.code == kExitOk);
  CHECK(read_rten<float>(ws.root / "feats" / "test.rten").shape() == Shape{32, 128});
}

TEST_CASE("grad-check") {
  const auto ok = cli({"grad-check", "--coords", "2"});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.find("variant=attn") != std::string::npos);
  CHECK(ok.out.find(" ok") != std::string::npos);

  const auto cat = cli({"grad-check", "--variant", "cat", "--coords", "2"});
  CHECK(cat.code == kExitOk);

  // Negative control: a corrupted backward rule must be caught.
  const auto bad = cli({"grad-check", "--coords", "2", "--fault-op", "softmax", "--fault-factor", "1.5"});
  CHECK(bad.code == kExitCheckFailed);
  CHECK(bad.out.find("FAILED") != std::string::npos);
  CHECK(bad.out.find("worst=") != std::string::npos);

  // The fault does not leak into later runs.
  CHECK(cli({"grad-check", "--variant", "add", "--coords", "1"}).code == kExitOk);
}
