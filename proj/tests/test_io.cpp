#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "auber/errors.hpp"
#include "auber/io.hpp"
#include "support.hpp"

using namespace auber;
namespace fs = std::filesystem;

namespace {

// Per-test scratch directory under the test runner's working dir.
struct TempDir {
  fs::path dir;

  TempDir() {
    static std::atomic<int> counter{0};
    dir = fs::path("io_scratch") / std::to_string(counter++);
    fs::create_directories(dir);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string path(const char* name) const { return (dir / name).string(); }
};

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.seq_len = 4;
  spec.vocab = 10;
  spec.trigger = 7;
  spec.label_noise = 0.0;
  return spec;
}

}  // namespace

TEST_CASE("token hashes are frozen") {
  CHECK(token_hash("hello") == 11831194018420276491ULL);
  CHECK(token_hash("world") == 5717881983045765875ULL);
  CHECK(token_hash("") == 14695981039346656037ULL);
  CHECK(token_hash("hello") != token_hash("hellp"));
}

TEST_CASE("tsv loading hashes tokens into the vocabulary") {
  TempDir tmp;
  const std::string path = tmp.path("data.tsv");
  write_file_atomic(path,
                    "1\thello world\n"
                    "\n"
                    "0\thello\r\n"
                    "1\ta b c d e f g h\n");

  const Dataset data = load_dataset_tsv(path, 64, 5, 2);
  REQUIRE(data.size() == 3);
  CHECK(data.num_classes == 2);

  CHECK(data.examples[0].label == 1);
  REQUIRE(data.examples[0].tokens.size() == 2);
  CHECK(data.examples[0].tokens[0] == static_cast<int>(token_hash("hello") % 64));
  CHECK(data.examples[0].tokens[1] == static_cast<int>(token_hash("world") % 64));

  CHECK(data.examples[1].label == 0);  // CRLF stripped
  REQUIRE(data.examples[1].tokens.size() == 1);
  CHECK(data.examples[1].tokens[0] == data.examples[0].tokens[0]);

  CHECK(data.examples[2].tokens.size() == 5);  // truncated to max_len

  const Dataset again = load_dataset_tsv(path, 64, 5, 2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(again.examples[i].label == data.examples[i].label);
    CHECK(again.examples[i].tokens == data.examples[i].tokens);
  }
}

TEST_CASE("tsv errors name the offending line") {
  TempDir tmp;
  const std::string path = tmp.path("bad.tsv");

  write_file_atomic(path, "1\tok line\nno tab here\n");
  CHECK_THROWS_WITH_AS(load_dataset_tsv(path, 64, 8, 2), doctest::Contains(":2:"), ParseError);

  write_file_atomic(path, "x\ttext\n");
  CHECK_THROWS_AS(load_dataset_tsv(path, 64, 8, 2), ParseError);

  write_file_atomic(path, "3\ttext\n");
  CHECK_THROWS_AS(load_dataset_tsv(path, 64, 8, 2), InputError);

  write_file_atomic(path, "1\t   \n");
  CHECK_THROWS_AS(load_dataset_tsv(path, 64, 8, 2), ParseError);

  write_file_atomic(path, "\n\n");
  CHECK_THROWS_AS(load_dataset_tsv(path, 64, 8, 2), InputError);

  CHECK_THROWS_AS(load_dataset_tsv(tmp.path("missing.tsv"), 64, 8, 2), IoError);
  write_file_atomic(path, "1\ttext\n");
  CHECK_THROWS_AS(load_dataset_tsv(path, 0, 8, 2), InputError);
  CHECK_THROWS_AS(load_dataset_tsv(path, 64, 0, 2), InputError);
  CHECK_THROWS_AS(load_dataset_tsv(path, 64, 8, 1), InputError);
}

TEST_CASE("synthetic data is deterministic, balanced and trigger-labelled") {
  const SyntheticSpec spec = small_spec();
  Rng a(130), b(130);
  const Dataset da = generate_synthetic(spec, 40, a);
  const Dataset db = generate_synthetic(spec, 40, b);
  REQUIRE(da.size() == 40);

  int positives = 0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    CHECK(da.examples[i].tokens == db.examples[i].tokens);
    CHECK(da.examples[i].label == db.examples[i].label);
    CHECK(da.examples[i].tokens.size() == 4);
    bool has_trigger = false;
    for (int t : da.examples[i].tokens) {
      CHECK(t >= 0);
      CHECK(t < 10);
      has_trigger = has_trigger || t == spec.trigger;
    }
    // Zero noise: the label is exactly the trigger indicator.
    CHECK(da.examples[i].label == (has_trigger ? 1 : 0));
    positives += da.examples[i].label;
  }
  CHECK(positives == 20);
}

TEST_CASE("label noise flips close to the configured fraction") {
  SyntheticSpec clean = small_spec();
  SyntheticSpec noisy = clean;
  noisy.label_noise = 0.15;

  // The same stream builds identical sequences; only the flip pass
  // differs, so the disagreement rate is the realized noise.
  Rng a(131), b(131);
  const Dataset dc = generate_synthetic(clean, 4000, a);
  const Dataset dn = generate_synthetic(noisy, 4000, b);
  int flipped = 0;
  for (std::size_t i = 0; i < dc.size(); ++i) {
    CHECK(dc.examples[i].tokens == dn.examples[i].tokens);
    if (dc.examples[i].label != dn.examples[i].label) ++flipped;
  }
  const double rate = static_cast<double>(flipped) / 4000.0;
  CHECK(rate > 0.13);
  CHECK(rate < 0.17);
}

TEST_CASE("an unreachable class balance raises a generation error") {
  SyntheticSpec spec;
  spec.seq_len = 1;
  spec.vocab = 3000;
  spec.trigger = 1;
  spec.label_noise = 0.0;
  Rng rng(132);
  CHECK_THROWS_AS(generate_synthetic(spec, 500, rng), GenerationError);
}

TEST_CASE("synthetic spec validation") {
  Rng rng(133);
  SyntheticSpec spec = small_spec();
  CHECK_THROWS_AS(generate_synthetic(spec, 0, rng), InputError);
  spec.seq_len = 0;
  CHECK_THROWS_AS(generate_synthetic(spec, 10, rng), InputError);
  spec = small_spec();
  spec.vocab = 1;
  CHECK_THROWS_AS(generate_synthetic(spec, 10, rng), InputError);
  spec = small_spec();
  spec.trigger = 10;
  CHECK_THROWS_AS(generate_synthetic(spec, 10, rng), InputError);
  spec = small_spec();
  spec.label_noise = 0.5;
  CHECK_THROWS_AS(generate_synthetic(spec, 10, rng), InputError);
}

TEST_CASE("the clean synthetic task is learnable") {
  const SyntheticSpec spec = small_spec();
  Rng drng(134);
  Dataset train = generate_synthetic(spec, 30, drng);

  Rng mrng(135);
  EncoderModel model = make_model(testsupport::tiny_dims(), mrng);
  Rng trng(136);
  fine_tune(model, train, 0.02, 50, 5, trng);
  CHECK(evaluate(model, train).accuracy >= 0.9);
}

TEST_CASE("checkpoints round-trip models to the bit") {
  TempDir tmp;
  Rng mrng(137);
  EncoderModel model = make_model(testsupport::tiny_dims(), mrng);
  prune_head(model, 1, 0);

  RunConfig cfg;
  cfg.model = model.dims;
  cfg.seed = 777;
  cfg.synthetic.vocab = 10;
  cfg.synthetic.seq_len = 4;
  cfg.state.matrix = MatrixKind::Query;
  cfg.state.norm = NormKind::L2;

  const std::string path = tmp.path("model.aubr");
  save_checkpoint(model, cfg, 0xDEADBEEFULL, path);
  const Checkpoint ckpt = load_checkpoint(path);

  CHECK(ckpt.version == 1);
  CHECK(ckpt.rng_state == 0xDEADBEEFULL);
  CHECK(ckpt.config.seed == 777);
  CHECK(ckpt.config.state.matrix == MatrixKind::Query);
  CHECK(ckpt.config.state.norm == NormKind::L2);
  CHECK(ckpt.model.dims.vocab == model.dims.vocab);

  const auto pa = parameter_blocks(model);
  const auto pb = parameter_blocks(ckpt.model);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t b = 0; b < pa.size(); ++b)
    for (std::size_t i = 0; i < pa[b].size(); ++i) CHECK(pa[b][i] == pb[b][i]);
  for (std::size_t i = 0; i < model.positional.size(); ++i)
    CHECK(ckpt.model.positional.storage()[i] == model.positional.storage()[i]);
  CHECK(ckpt.model.layers[1].gates[0] == 0.0);
  CHECK(ckpt.model.layers[1].gates[1] == 1.0);
  CHECK(ckpt.model.layers[0].gates[0] == 1.0);

  // Same logits after the round trip.
  const std::vector<int> tokens = {1, 2, 3};
  const auto la = model_forward(model, tokens).logits;
  const auto lb = model_forward(ckpt.model, tokens).logits;
  for (std::size_t c = 0; c < la.size(); ++c) CHECK(la[c] == lb[c]);
}

TEST_CASE("corrupted checkpoints are rejected") {
  TempDir tmp;
  Rng mrng(138);
  EncoderModel model = make_model(testsupport::tiny_dims(), mrng);
  RunConfig cfg;
  cfg.model = model.dims;
  cfg.synthetic.vocab = 10;
  cfg.synthetic.seq_len = 4;
  const std::string path = tmp.path("model.aubr");
  save_checkpoint(model, cfg, 1, path);
  const std::string good = read_file(path);
  const std::string bad_path = tmp.path("bad.aubr");

  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    write_file_atomic(bad_path, bad);
    CHECK_THROWS_AS(load_checkpoint(bad_path), FormatError);
  }
  SUBCASE("unsupported version") {
    std::string bad = good;
    bad[4] = 2;
    write_file_atomic(bad_path, bad);
    CHECK_THROWS_AS(load_checkpoint(bad_path), FormatError);
  }
  SUBCASE("garbled header") {
    std::string bad = good;
    bad[12] = 'X';
    write_file_atomic(bad_path, bad);
    CHECK_THROWS_AS(load_checkpoint(bad_path), FormatError);
  }
  SUBCASE("truncated weights") {
    write_file_atomic(bad_path, good.substr(0, good.size() - 100));
    CHECK_THROWS_AS(load_checkpoint(bad_path), FormatError);
  }
  SUBCASE("trailing bytes") {
    write_file_atomic(bad_path, good + "z");
    CHECK_THROWS_AS(load_checkpoint(bad_path), FormatError);
  }
  SUBCASE("invalid gate byte") {
    std::string bad = good;
    bad[bad.size() - 1] = 7;
    write_file_atomic(bad_path, bad);
    CHECK_THROWS_AS(load_checkpoint(bad_path), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(tmp.path("nope.aubr")), IoError); }
}

TEST_CASE("configs round-trip through json") {
  RunConfig cfg;
  cfg.model.layers = 3;
  cfg.model.heads = 6;
  cfg.trainer.base_lr = 5e-4;
  cfg.trainer.split = SplitRatio::TrainTwoValOne;
  cfg.agent.episodes = 77;
  cfg.agent.memory = 2048;
  cfg.state.matrix = MatrixKind::Key;
  cfg.state.norm = NormKind::L2;
  cfg.reverse_order = true;
  cfg.seed = 424242;
  cfg.paths.train = "a.tsv";
  cfg.paths.report = "r.json";
  cfg.synthetic.label_noise = 0.25;
  cfg.synthetic.trigger = 3;

  const RunConfig back = parse_config(config_to_json(cfg));
  CHECK(back.model.layers == 3);
  CHECK(back.model.heads == 6);
  CHECK(back.trainer.base_lr == 5e-4);
  CHECK(back.trainer.split == SplitRatio::TrainTwoValOne);
  CHECK(back.agent.episodes == 77);
  CHECK(back.agent.memory == 2048);
  CHECK(back.state.matrix == MatrixKind::Key);
  CHECK(back.state.norm == NormKind::L2);
  CHECK(back.reverse_order);
  CHECK(back.seed == 424242);
  CHECK(back.paths.train == "a.tsv");
  CHECK(back.paths.report == "r.json");
  CHECK(back.synthetic.label_noise == 0.25);
  CHECK(back.synthetic.trigger == 3);

  // Emitting twice gives identical bytes.
  CHECK(config_to_json(back) == config_to_json(cfg));
}

TEST_CASE("partial configs inherit defaults") {
  const RunConfig cfg = parse_config("{\"seed\": 5, \"agent\": {\"hidden\": 64}}");
  CHECK(cfg.seed == 5);
  CHECK(cfg.agent.hidden == 64);
  CHECK(cfg.agent.batch == 128);
  CHECK(cfg.model.heads == 4);
  CHECK(cfg.prune_mode == "gates");

  const RunConfig dflt = parse_config("{}");
  CHECK(dflt.model.embed_dim == default_config().model.embed_dim);
}

TEST_CASE("config rejection paths") {
  CHECK_THROWS_AS(parse_config("not json"), ParseError);
  CHECK_THROWS_AS(parse_config("{\"mystery\": 1}"), ParseError);
  CHECK_THROWS_AS(parse_config("{\"agent\": {\"mystery\": 1}}"), ParseError);
  CHECK_THROWS_AS(parse_config("{\"seed\": \"abc\"}"), ParseError);
  CHECK_THROWS_AS(parse_config("{\"order\": \"sideways\"}"), ParseError);
  CHECK_THROWS_AS(parse_config("{\"trainer\": {\"split\": \"even\"}}"), ParseError);
  CHECK_THROWS_AS(parse_config("{\"state\": {\"norm\": \"l3\"}}"), ParseError);
  CHECK_THROWS_AS(parse_config("{\"model\": {\"heads\": 1}}"), InputError);
  CHECK_THROWS_AS(parse_config("{\"prune_mode\": \"weights\"}"), InputError);
  CHECK_THROWS_AS(parse_config("{\"synthetic\": {\"label_noise\": 0.5}}"), InputError);
  CHECK_THROWS_AS(parse_config("{\"synthetic\": {\"seq_len\": 99}}"), InputError);
  CHECK_THROWS_AS(parse_config("{\"synthetic\": {\"vocab\": 100}}"), InputError);
  CHECK_THROWS_AS(parse_config("{\"agent\": {\"memory\": 4}}"), InputError);
}

TEST_CASE("load_config reads from disk") {
  TempDir tmp;
  const std::string path = tmp.path("cfg.json");
  write_file_atomic(path, "{\"seed\": 9}\n");
  CHECK(load_config(path).seed == 9);
  CHECK_THROWS_AS(load_config(tmp.path("absent.json")), IoError);
}

TEST_CASE("reports round-trip and re-emit byte-identically") {
  TempDir tmp;
  PruneReport rep;
  rep.method = "auber";
  rep.order = {1, 0};
  rep.total_pruned = 3;
  rep.pre = {0.8407, 0.6813};
  rep.post = {0.8603, 0.7201};
  rep.seed = 99;
  LayerPolicy p0;
  p0.layer = 1;
  p0.pruned_heads = {2, 0};
  p0.final_mini_val_accuracy = 0.875;
  rep.layer_policies.push_back(p0);
  LayerPolicy p1;
  p1.layer = 0;
  p1.pruned_heads = {3};
  p1.final_mini_val_accuracy = 0.9;
  rep.layer_policies.push_back(p1);

  RunConfig cfg;
  const std::string path = tmp.path("report.json");
  emit_report(rep, cfg, path);
  const PruneReport back = load_report(path);

  CHECK(back.method == "auber");
  CHECK(back.order == std::vector<std::size_t>{1, 0});
  CHECK(back.total_pruned == 3);
  CHECK(back.pre.accuracy == 0.8407);
  CHECK(back.pre.mcc == 0.6813);
  CHECK(back.post.accuracy == 0.8603);
  CHECK(back.seed == 99);
  REQUIRE(back.layer_policies.size() == 2);
  CHECK(back.layer_policies[0].layer == 1);
  CHECK(back.layer_policies[0].pruned_heads == std::vector<std::size_t>{2, 0});
  CHECK(back.layer_policies[0].final_mini_val_accuracy == 0.875);
  CHECK(back.layer_policies[1].pruned_heads == std::vector<std::size_t>{3});

  const std::string path2 = tmp.path("report2.json");
  emit_report(back, cfg, path2);
  CHECK(read_file(path2) == read_file(path));
}

TEST_CASE("report loading errors") {
  TempDir tmp;
  const std::string path = tmp.path("r.json");
  write_file_atomic(path, "{nope");
  CHECK_THROWS_AS(load_report(path), ParseError);
  write_file_atomic(path, "{\"method\": \"auber\"}");
  CHECK_THROWS_AS(load_report(path), FormatError);
}

TEST_CASE("the comparison table lines up runs") {
  PruneReport a;
  a.method = "auber";
  a.total_pruned = 5;
  a.pre = {0.8, 0.6};
  a.post = {0.85, 0.7};
  PruneReport b;
  b.method = "random";
  b.total_pruned = 5;
  b.pre = {0.8, 0.6};
  b.post = {0.75, 0.5};

  const std::string table = render_comparison({a, b});
  CHECK(table.find("policy") != std::string::npos);
  CHECK(table.find("delta_pp") != std::string::npos);
  CHECK(table.find("auber") != std::string::npos);
  CHECK(table.find("random") != std::string::npos);
  CHECK(table.find("85.00%") != std::string::npos);
  CHECK(table.find("+5.00") != std::string::npos);
  CHECK(table.find("-5.00") != std::string::npos);
  CHECK_THROWS_AS(render_comparison({}), InputError);
}

TEST_CASE("metrics logs serialize to csv") {
  TempDir tmp;
  MetricsLog log;
  log.add(1, "train", 0.5, 0.25);
  log.add(2, "train", 1.0, 2.0);
  const std::string path = tmp.path("metrics.csv");
  write_metrics_csv(log, path);
  CHECK(read_file(path) == "epoch,phase,accuracy,loss\n1,train,0.5,0.25\n2,train,1,2\n");

  MetricsLog bad;
  bad.add(1, "a,b", 0.5, 0.5);
  CHECK_THROWS_AS(write_metrics_csv(bad, tmp.path("bad.csv")), InputError);
}

TEST_CASE("atomic writes replace and leave no droppings") {
  TempDir tmp;
  const std::string path = tmp.path("file.txt");
  write_file_atomic(path, "first");
  CHECK(read_file(path) == "first");
  write_file_atomic(path, "second");
  CHECK(read_file(path) == "second");
  CHECK_FALSE(fs::exists(path + ".tmp"));
  CHECK_THROWS_AS(write_file_atomic(tmp.path("no/such/dir/file"), "x"), IoError);
  CHECK_THROWS_AS(read_file(tmp.path("ghost")), IoError);
}
