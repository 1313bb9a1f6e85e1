#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "hetcd/raster.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(HETCD_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path work_dir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "hetcd_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::vector<std::uint8_t> slurp(const fs::path& p) { return hetcd::detail::read_file_bytes(p); }

}  // namespace

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run("--bogus"), 2);
    EXPECT_EQ(run("no-such-subcommand"), 2);
    EXPECT_EQ(run(""), 2);  // a subcommand is required
    EXPECT_EQ(run("synth"), 2);  // missing required --out
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run("synth --help"), 0);
}

TEST(Cli, RuntimeErrorsExitOne) {
    const auto out = work_dir() / "missing";
    EXPECT_EQ(run("train-cae --bundle /nonexistent/manifest.json --out " + out.string()), 1);
    EXPECT_EQ(run("synth --out " + out.string() + " --height 4"), 1);  // below minimum size
}

TEST(Cli, SynthDeterministicBytes) {
    const auto a = work_dir() / "synth_a";
    const auto b = work_dir() / "synth_b";
    ASSERT_EQ(run("synth --seed 7 --height 48 --width 40 --out " + a.string()), 0);
    ASSERT_EQ(run("synth --seed 7 --height 48 --width 40 --out " + b.string()), 0);
    for (const auto& entry : fs::directory_iterator(a)) {
        const auto name = entry.path().filename();
        ASSERT_TRUE(fs::exists(b / name)) << name;
        EXPECT_EQ(slurp(entry.path()), slurp(b / name)) << "file differs: " << name;
    }
    EXPECT_TRUE(fs::exists(a / "run.json"));

    const auto c = work_dir() / "synth_c";
    ASSERT_EQ(run("synth --seed 8 --height 48 --width 40 --out " + c.string()), 0);
    EXPECT_NE(slurp(a / "t1.bin"), slurp(c / "t1.bin"));
}

TEST(Cli, TomlConfigWithFlagOverride) {
    const auto dir = work_dir() / "config";
    fs::create_directories(dir);
    const auto cfg = dir / "synth.toml";
    {
        std::ofstream out(cfg);
        out << "[synth]\nheight = 48\nwidth = 40\nseed = 21\n";
    }
    const auto a = dir / "from_config";
    ASSERT_EQ(run("--config " + cfg.string() + " synth --out " + a.string()), 0);
    auto bundle = hetcd::load_bundle(a / "manifest.json");
    EXPECT_EQ(bundle.t1.height, 48);
    EXPECT_EQ(bundle.t1.width, 40);

    // Command-line flags take precedence over the config file.
    const auto b = dir / "override";
    ASSERT_EQ(run("--config " + cfg.string() + " synth --height 64 --out " + b.string()), 0);
    EXPECT_EQ(hetcd::load_bundle(b / "manifest.json").t1.height, 64);
}

TEST(Cli, EndToEndPipeline) {
    const auto d = work_dir() / "e2e";
    fs::create_directories(d);
    const std::string bundle = (d / "bundle").string();
    ASSERT_EQ(run("synth --seed 7 --height 64 --width 64 --target-frac 0.15 --out " + bundle), 0);
    ASSERT_EQ(run("train-cae --bundle " + bundle + "/manifest.json --out " + (d / "cae").string() +
                  " --seed 3 --epochs 2 --batches-per-epoch 30 --patches-per-batch 6"
                  " --patch-size 12 --hidden-channels 6 --code-channels 3 --lr 0.002"),
              0);
    ASSERT_EQ(run("translate --bundle " + bundle + "/manifest.json --model " + (d / "cae").string() +
                  " --out " + (d / "trans").string()),
              0);
    ASSERT_EQ(run("cae-map --translation " + (d / "trans").string() + " --out " +
                  (d / "cmap").string()),
              0);
    ASSERT_EQ(run("features --bundle " + bundle + "/manifest.json --translation " +
                  (d / "trans").string() + " --variant no-diff --out " + (d / "feat").string()),
              0);
    ASSERT_EQ(run("train-occ --bundle " + bundle + "/manifest.json --translation " +
                  (d / "trans").string() + " --npos 500 --seed 5 --mlp-max-epochs 60 --out " +
                  (d / "occ").string()),
              0);
    ASSERT_EQ(run("predict --bundle " + bundle + "/manifest.json --translation " +
                  (d / "trans").string() + " --model " + (d / "occ").string() + " --out " +
                  (d / "pred").string()),
              0);
    ASSERT_EQ(run("eval --bundle " + bundle + "/manifest.json --pred " + (d / "pred").string() +
                  " --npos 500 --out " + (d / "eval").string()),
              0);

    // Metrics CSV carries the pipeline F1.
    std::ifstream csv(d / "eval" / "metrics.csv");
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    EXPECT_EQ(header, "method,variant,npos,rep,f1,tp,fp,fn,tn");
    const auto f1_pos = row.find(",500,0,");
    ASSERT_NE(f1_pos, std::string::npos) << row;
    const double f1 = std::stod(row.substr(f1_pos + 7));
    EXPECT_GE(f1, 0.85);

    for (const char* stage : {"bundle", "cae", "trans", "cmap", "feat", "occ", "pred", "eval"})
        EXPECT_TRUE(fs::exists(d / stage / "run.json")) << stage;
    EXPECT_TRUE(fs::exists(d / "eval" / "confusion.png"));
    EXPECT_TRUE(fs::exists(d / "cae" / "history.csv"));

    // Lowering the vote threshold can only add positives.
    ASSERT_EQ(run("predict --bundle " + bundle + "/manifest.json --translation " +
                  (d / "trans").string() + " --model " + (d / "occ").string() +
                  " --threshold 0.3 --out " + (d / "pred03").string()),
              0);
    auto strict = slurp(d / "pred" / "map.bin");
    auto loose = slurp(d / "pred03" / "map.bin");
    ASSERT_EQ(strict.size(), loose.size());
    for (std::size_t i = 0; i < strict.size(); ++i)
        if (strict[i]) ASSERT_EQ(loose[i], 1);

    // The step1 and isvm model kinds train, save and predict through the
    // same surface.
    for (const std::string method : {"step1", "isvm"}) {
        ASSERT_EQ(run("train-occ --bundle " + bundle + "/manifest.json --translation " +
                      (d / "trans").string() + " --npos 300 --seed 5 --method " + method +
                      " --out " + (d / ("occ_" + method)).string()),
                  0);
        ASSERT_EQ(run("predict --bundle " + bundle + "/manifest.json --translation " +
                      (d / "trans").string() + " --model " + (d / ("occ_" + method)).string() +
                      " --out " + (d / ("pred_" + method)).string()),
                  0);
        auto mask = slurp(d / ("pred_" + method) / "map.bin");
        EXPECT_EQ(mask.size(), 64u * 64u);
    }

    // A small ablation over the cheap methods emits the report files.
    ASSERT_EQ(run("ablate --bundle " + bundle + "/manifest.json --translation " +
                  (d / "trans").string() + " --grid 100,300 --reps 2 --methods step1,isvm"
                  " --jobs 2 --out " + (d / "abl").string()),
              0);
    EXPECT_TRUE(fs::exists(d / "abl" / "metrics.csv"));
    EXPECT_TRUE(fs::exists(d / "abl" / "report.csv"));
    EXPECT_TRUE(fs::exists(d / "abl" / "curves.png"));
    std::ifstream rep(d / "abl" / "report.csv");
    int lines = 0;
    std::string l;
    while (std::getline(rep, l))
        if (!l.empty()) ++lines;
    EXPECT_EQ(lines, 1 + 2 * 2);  // header + |grid| x |methods|
}
