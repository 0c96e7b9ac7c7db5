#include "myo/experiment.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

using namespace myo;
using myo::testing::TempDir;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MYO_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinySpec = "n_subjects = 2\nduration_s = 0.5\n";

const char* kTinyConfig = R"(run_id = tiny
output_dir = out
folds = all
dataset.spec = tiny.spec
model.d_model = 16
model.n_layers = 1
model.n_heads = 2
model.d_ff = 16
model.d_t2v = 16
model.d_head = 8
model.f1 = 4
model.f2 = 8
train.stage1.epochs_max = 2
train.stage2.epochs_max = 1
train.adapt.epochs_max = 2
train.stage1.batch_size = 8
)";

}  // namespace

TEST(Kv, ParsesCommentsAndWhitespace) {
  const KvDoc d = parse_kv("# header\n a = 1 \n\nb=x y # trailing\n");
  EXPECT_EQ(d.values.at("a"), "1");
  EXPECT_EQ(d.values.at("b"), "x y");
  EXPECT_EQ(d.line_of.at("b"), 4);
}

TEST(Kv, DuplicateAndMalformedLinesNameTheLine) {
  try {
    parse_kv("a = 1\nb = 2\na = 3\n", "f.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("f.cfg:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_kv("just words\n"), ConfigError);
  EXPECT_THROW(parse_kv(" = 4\n"), ConfigError);
}

TEST(Kv, SchemaRejectsUnknownKeysAndBadTypes) {
  const KvSchema schema = {{"n", KvType::Int, "3", "count"}, {"xs", KvType::RealList, "1, 2", "values"}};
  EXPECT_THROW(validate_kv(parse_kv("m = 1\n"), schema), ConfigError);
  try {
    validate_kv(parse_kv("n = 1.5\n"), schema);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'n'"), std::string::npos);
  }
  const KvReader r(parse_kv("xs = 0.5, 2.5\n"), schema);
  EXPECT_EQ(r.integer("n"), 3);
  EXPECT_EQ(r.real_list("xs"), (std::vector<double>{0.5, 2.5}));
}

TEST(Kv, RenderedSchemaRoundTrips) {
  const std::string text = render_schema(experiment_schema());
  EXPECT_NO_THROW(validate_kv(parse_kv(text), experiment_schema()));
}

TEST(Experiment, ShippedConfigsValidate) {
  for (const char* name : {"paper.cfg", "desk.cfg"}) {
    const ExperimentConfig cfg = load_experiment(fs::path(MYO_CONFIG_DIR) / name);
    EXPECT_NO_THROW(cfg.model.validate()) << name;
    EXPECT_NO_THROW(cfg.train.validate()) << name;
  }
  EXPECT_EQ(load_experiment(fs::path(MYO_CONFIG_DIR) / "paper.cfg").model.to_json(), ModelConfig{}.to_json());
}

TEST(Experiment, DatasetSourceMustBeUnique) {
  TempDir dir("cfg");
  write(dir / "both.cfg", "dataset.spec = a.spec\ndataset.manifest = m.json\n");
  EXPECT_THROW(load_experiment(dir / "both.cfg"), ConfigError);
  write(dir / "none.cfg", "run_id = x\n");
  EXPECT_THROW(load_experiment(dir / "none.cfg"), ConfigError);
}

TEST(Cli, ExitCodes) {
  TempDir dir("cli-codes");
  const fs::path log = dir / "log.txt";
  EXPECT_EQ(run_cli("--help", log), 0);
  EXPECT_EQ(run_cli("no-such-command", log), 1);
  EXPECT_EQ(run_cli("validate", log), 1);
  write(dir / "bad.cfg", "model.d_model = twelve\n");
  EXPECT_EQ(run_cli("validate --config " + (dir / "bad.cfg").string(), log), 1);
  EXPECT_NE(slurp(log).find("model.d_model"), std::string::npos);
  write(dir / "unknown.cfg", "dataset.spec = x.spec\nmodel.width = 3\n");
  EXPECT_EQ(run_cli("validate --config " + (dir / "unknown.cfg").string(), log), 1);
  EXPECT_EQ(run_cli("validate --manifest " + (dir / "missing.json").string(), log), 2);
  EXPECT_EQ(run_cli("validate --schema experiment", log), 0);
  EXPECT_NE(slurp(log).find("model.d_t2v"), std::string::npos);
  EXPECT_EQ(run_cli("validate --config " + std::string(MYO_CONFIG_DIR) + "/desk.cfg", log), 0);
  EXPECT_EQ(run_cli("profile --checkpoint " + (dir / "none.ckpt").string(), log), 1);
}

TEST(Cli, SynthRefusesNonEmptyDirectory) {
  TempDir dir("cli-synth");
  write(dir / "tiny.spec", kTinySpec);
  const fs::path log = dir / "log.txt";
  EXPECT_EQ(run_cli("synth --spec " + (dir / "tiny.spec").string() + " --out " + (dir / "ds").string(), log), 0);
  EXPECT_EQ(load_dataset(dir / "ds" / "manifest.json").trial_count(), 2 * 10 * 6);
  EXPECT_EQ(run_cli("synth --spec " + (dir / "tiny.spec").string() + " --out " + (dir / "ds").string(), log), 2);
  EXPECT_EQ(run_cli("validate --manifest " + (dir / "ds" / "manifest.json").string(), log), 0);
}

TEST(Cli, TrainAdaptExportPipeline) {
  TempDir dir("cli-run");
  write(dir / "tiny.spec", kTinySpec);
  write(dir / "tiny.cfg", kTinyConfig);
  const fs::path log = dir / "log.txt";
  const std::string cfg = (dir / "tiny.cfg").string();
  ASSERT_EQ(run_cli("train --config " + cfg, log), 0) << slurp(log);
  const fs::path run = dir / "out" / "tiny";
  for (const char* f : {"fold0/tiny.stage1.ckpt", "fold0/tiny.stage2.ckpt", "fold0/metrics.json",
                        "fold0/train_log.jsonl", "fold1/metrics.json", "run.json"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  const auto metrics = read_json(run / "fold0" / "metrics.json");
  EXPECT_EQ(metrics["config"]["model"]["d_model"], 16);
  EXPECT_TRUE(metrics.contains("interference"));
  EXPECT_TRUE(read_json(run / "run.json").contains("aggregate"));
  const Checkpoint ck = load_checkpoint(run / "fold0" / "tiny.stage2.ckpt");
  EXPECT_EQ(ck.subjects_seen, std::set<int>{2});

  EXPECT_EQ(run_cli("train --config " + cfg, log), 1);  // run_id already used

  ASSERT_EQ(run_cli("adapt --config " + cfg + " --pretrained " + run.string(), log), 0) << slurp(log);
  EXPECT_TRUE(fs::exists(run / "adapt.json"));

  ASSERT_EQ(run_cli("profile --checkpoint " + (run / "fold0" / "tiny.stage2.ckpt").string() +
                        " --runs 5 --warmup 1 --out " + (dir / "lat.json").string(),
                    log),
            0);
  EXPECT_TRUE(read_json(dir / "lat.json")["within_budget"].get<bool>());

  ASSERT_EQ(run_cli("export --run-dir " + run.string() + " --out " + (dir / "csv").string(), log), 0) << slurp(log);
  EXPECT_TRUE(fs::exists(dir / "csv" / "interference_hist.csv"));
  EXPECT_TRUE(fs::exists(dir / "csv" / "adapt.csv"));
  const std::string first = slurp(dir / "csv" / "adapt.csv");
  ASSERT_EQ(run_cli("export --run-dir " + run.string() + " --out " + (dir / "csv").string(), log), 0);
  EXPECT_EQ(slurp(dir / "csv" / "adapt.csv"), first);
  EXPECT_EQ(first.substr(0, first.find('\n')), "fold,class,pre_f1,post_f1");

  fs::create_directories(dir / "empty");
  EXPECT_EQ(run_cli("export --run-dir " + (dir / "empty").string(), log), 2);
}
