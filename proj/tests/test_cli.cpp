// End-to-end tests for the envtrack binary: every subcommand, the file
// formats it writes, and the error paths that guard against silently wrong
// experiments. The binary path comes in through ENVTRACK_BIN.

#include <gtest/gtest.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "envtrack/dataio.hpp"

namespace fs = std::filesystem;
using namespace envtrack;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  EXPECT_TRUE(f.good()) << path;
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("envtrack_cli_" +
            std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  // Runs the binary and returns its exit code; stderr lands in err_ for
  // message assertions.
  int run(const std::string& args) {
    const std::string err_file = path("stderr.txt");
    const std::string cmd =
        std::string(ENVTRACK_BIN) + " " + args + " >/dev/null 2>" + err_file;
    const int rc = std::system(cmd.c_str());
    err_ = slurp(err_file);
    return rc == -1 ? -1 : WEXITSTATUS(rc);
  }

  // Shared tiny setup: 2 subjects, 2 minutes, plus a config small enough to
  // train in well under a second.
  void make_data_and_config() {
    ASSERT_EQ(run("synth gen --subjects 2 --minutes 2 --out " + path("data")), 0) << err_;
    std::ofstream f(path("small.json"));
    f << R"({
  "network": {"window_samples": 128, "conv_filters": 4, "dense1_units": 8,
              "embed_dim": 8, "lstm_hidden": 8},
  "training": {"max_epochs": 2, "batch_size": 32},
  "dataset": {"window_s": 2.0}
})";
  }

  fs::path dir_;
  std::string err_;
};

TEST_F(CliTest, SynthGenIsDeterministicAndDocumentsItself) {
  ASSERT_EQ(run("synth gen --subjects 2 --minutes 1 --out " + path("a")), 0) << err_;
  ASSERT_EQ(run("synth gen --subjects 2 --minutes 1 --out " + path("b")), 0) << err_;
  EXPECT_EQ(slurp(path("a/s01.nmm")), slurp(path("b/s01.nmm")));
  EXPECT_EQ(slurp(path("a/s02.nmm")), slurp(path("b/s02.nmm")));

  EXPECT_EQ(slurp(path("a/manifest.json")),
            "{\"recordings\":[{\"path\":\"s01.nmm\",\"subject_id\":\"s01\"},"
            "{\"path\":\"s02.nmm\",\"subject_id\":\"s02\"}]}\n");

  const Recording rec = read_recording(path("a/s01.nmm"));
  EXPECT_EQ(rec.n_samples(), 3840);  // one minute at 64 Hz
  EXPECT_EQ(rec.sample_rate, 64u);
  EXPECT_EQ(rec.n_channels, 64u);

  // The echo is a usable config: regenerating from it reproduces the bytes.
  ASSERT_EQ(run("synth gen --config " + path("a/config.json") + " --out " + path("c")), 0)
      << err_;
  EXPECT_EQ(slurp(path("a/s01.nmm")), slurp(path("c/s01.nmm")));
}

TEST_F(CliTest, SynthGenFlagsOverrideConfig) {
  {
    std::ofstream f(path("gen.json"));
    f << R"({"synth": {"n_subjects": 3, "minutes": 1.0, "snr_db": 5.0}})";
  }
  ASSERT_EQ(
      run("synth gen --config " + path("gen.json") + " --subjects 2 --out " + path("d")), 0)
      << err_;
  EXPECT_TRUE(fs::exists(path("d/s02.nmm")));
  EXPECT_FALSE(fs::exists(path("d/s03.nmm")));
  // Echoed config keeps the config's snr and the flag's subject count.
  const std::string echo = slurp(path("d/config.json"));
  EXPECT_NE(echo.find("\"n_subjects\": 2"), std::string::npos) << echo;
  EXPECT_NE(echo.find("\"snr_db\": 5.0"), std::string::npos) << echo;
}

TEST_F(CliTest, UnknownConfigKeysAreRejected) {
  {
    std::ofstream f(path("bad1.json"));
    f << R"({"networ": {"seed": 1}})";
  }
  EXPECT_NE(run("synth gen --config " + path("bad1.json") + " --out " + path("x")), 0);
  EXPECT_NE(err_.find("unknown key \"networ\""), std::string::npos) << err_;

  {
    std::ofstream f(path("bad2.json"));
    f << R"({"training": {"learning_rte": 0.01}})";
  }
  EXPECT_NE(run("synth gen --config " + path("bad2.json") + " --out " + path("x")), 0);
  EXPECT_NE(err_.find("learning_rte"), std::string::npos) << err_;
}

TEST_F(CliTest, PrepRunProducesAlignedContainer) {
  // Raw 512 Hz EEG, 10 s, 4 channels; stimulus 8 kHz, 9.5 s. After prep both
  // sides live at 64 Hz and are cut to the shorter stream.
  Recording raw;
  raw.subject_id = "p01";
  raw.recording_id = "story";
  raw.sample_rate = 512;
  raw.n_channels = 4;
  const int n = 512 * 10;
  raw.envelope.assign(n, 0.0F);  // raw containers may carry a placeholder envelope
  raw.eeg.resize(4 * static_cast<std::size_t>(n));
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < n; ++i) {
      const double t = i / 512.0;
      raw.eeg[static_cast<std::size_t>(c) * n + i] =
          static_cast<float>(std::sin(2.0 * 3.14159265358979 * (5.0 + c) * t));
    }
  }
  write_recording(raw, path("raw.nmm"));

  // 16-bit PCM mono WAV, hand-assembled.
  {
    const int rate = 8000;
    const int ns = rate * 19 / 2;
    std::string d;
    auto u16 = [&](std::uint16_t v) {
      d.push_back(static_cast<char>(v & 0xFF));
      d.push_back(static_cast<char>(v >> 8));
    };
    auto u32 = [&](std::uint32_t v) {
      for (int k = 0; k < 4; ++k) d.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
    };
    d += "RIFF";
    u32(36 + 2u * ns);
    d += "WAVEfmt ";
    u32(16);
    u16(1);
    u16(1);
    u32(rate);
    u32(rate * 2);
    u16(2);
    u16(16);
    d += "data";
    u32(2u * ns);
    for (int i = 0; i < ns; ++i) {
      const double t = i / static_cast<double>(rate);
      const double mod = 1.0 + 0.5 * std::sin(2.0 * 3.14159265358979 * 3.0 * t);
      const double s = mod * std::sin(2.0 * 3.14159265358979 * 440.0 * t);
      u16(static_cast<std::uint16_t>(
          static_cast<std::int16_t>(std::lround(s * 16000.0))));
    }
    std::ofstream f(path("stim.wav"), std::ios::binary);
    f << d;
  }

  ASSERT_EQ(run("prep run --eeg " + path("raw.nmm") + " --audio " + path("stim.wav") +
                " --out " + path("prepped.nmm")),
            0)
      << err_;
  const Recording rec = read_recording(path("prepped.nmm"));
  EXPECT_EQ(rec.sample_rate, 64u);
  EXPECT_EQ(rec.n_channels, 4u);
  EXPECT_EQ(rec.n_samples(), 608);  // min(10 s, 9.5 s) * 64
  EXPECT_EQ(rec.subject_id, "p01");
  EXPECT_EQ(rec.recording_id, "story");
}

TEST_F(CliTest, TrainEvalRoundTripWritesPinnedFormats) {
  make_data_and_config();
  ASSERT_EQ(run("train --scenario si --data " + path("data") + " --config " +
                path("small.json") + " --out " + path("models/si.nmw")),
            0)
      << err_;
  EXPECT_TRUE(fs::exists(path("models/si.nmw")));
  EXPECT_TRUE(fs::exists(path("models/si.config.json")));
  const std::string hist = slurp(path("models/si.history.csv"));
  EXPECT_EQ(hist.rfind("epoch,train_loss,val_loss,val_acc\n", 0), 0u) << hist;
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 3);  // header + 2 epochs

  ASSERT_EQ(run("eval --model " + path("models/si.nmw") + " --data " + path("data") +
                " --window-s 2 --report " + path("reports/si.csv")),
            0)
      << err_;
  const std::string report = slurp(path("reports/si.csv"));
  EXPECT_EQ(report.rfind("subject_id,n_segments,n_correct,accuracy\n", 0), 0u) << report;
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 3);
  EXPECT_NE(report.find("\ns01,"), std::string::npos);
  EXPECT_NE(report.find("\ns02,"), std::string::npos);

  const std::string summary = slurp(path("reports/si.summary.json"));
  EXPECT_EQ(summary.rfind("{\"n\":2,\"mean\":", 0), 0u) << summary;
  EXPECT_EQ(summary.back(), '\n');

  // Determinism across identical invocations, model bytes and report bytes.
  ASSERT_EQ(run("train --scenario si --data " + path("data") + " --config " +
                path("small.json") + " --out " + path("models2/si.nmw")),
            0)
      << err_;
  EXPECT_EQ(slurp(path("models/si.nmw")), slurp(path("models2/si.nmw")));
}

TEST_F(CliTest, SdWritesPerSubjectArtifacts) {
  make_data_and_config();
  ASSERT_EQ(run("train --scenario sd --data " + path("data") + " --config " +
                path("small.json") + " --out " + path("models/sd.nmw")),
            0)
      << err_;
  for (const char* s : {"s01", "s02"}) {
    EXPECT_TRUE(fs::exists(path("models/sd." + std::string(s) + ".nmw"))) << s;
    EXPECT_TRUE(fs::exists(path("models/sd." + std::string(s) + ".history.csv"))) << s;
    EXPECT_TRUE(fs::exists(path("models/sd." + std::string(s) + ".config.json"))) << s;
  }
}

TEST_F(CliTest, TlFineTunesFromPooledModel) {
  make_data_and_config();
  ASSERT_EQ(run("train --scenario si --data " + path("data") + " --config " +
                path("small.json") + " --out " + path("models/si.nmw")),
            0)
      << err_;
  ASSERT_EQ(run("train --scenario tl --data " + path("data") + " --config " +
                path("small.json") + " --init " + path("models/si.nmw") + " --out " +
                path("models/tl.nmw")),
            0)
      << err_;
  EXPECT_TRUE(fs::exists(path("models/tl.s01.nmw")));
  EXPECT_TRUE(fs::exists(path("models/tl.s02.nmw")));

  // Error paths around --init.
  EXPECT_NE(run("train --scenario tl --data " + path("data") + " --config " +
                path("small.json") + " --out " + path("x.nmw")),
            0);
  EXPECT_NE(err_.find("--init"), std::string::npos) << err_;
  EXPECT_NE(run("train --scenario sd --data " + path("data") + " --config " +
                path("small.json") + " --init " + path("models/si.nmw") + " --out " +
                path("x.nmw")),
            0);
  EXPECT_NE(err_.find("only applies to the tl scenario"), std::string::npos) << err_;
}

TEST_F(CliTest, WindowDisagreementIsRejected) {
  make_data_and_config();
  {
    std::ofstream f(path("mismatch.json"));
    f << R"({"network": {"window_samples": 640}, "dataset": {"window_s": 2.0}})";
  }
  EXPECT_NE(run("train --scenario si --data " + path("data") + " --config " +
                path("mismatch.json") + " --out " + path("x.nmw")),
            0);
  EXPECT_NE(err_.find("128"), std::string::npos) << err_;
  EXPECT_NE(err_.find("640"), std::string::npos) << err_;

  // Same guard at eval time, against the model's own sidecar.
  ASSERT_EQ(run("train --scenario si --data " + path("data") + " --config " +
                path("small.json") + " --out " + path("models/si.nmw")),
            0)
      << err_;
  EXPECT_NE(run("eval --model " + path("models/si.nmw") + " --data " + path("data") +
                " --window-s 10 --report " + path("x.csv")),
            0);
  EXPECT_NE(err_.find("does not match"), std::string::npos) << err_;
}

TEST_F(CliTest, EvalSubjectFilterMatchesFullReport) {
  make_data_and_config();
  ASSERT_EQ(run("train --scenario si --data " + path("data") + " --config " +
                path("small.json") + " --out " + path("models/si.nmw")),
            0)
      << err_;
  ASSERT_EQ(run("eval --model " + path("models/si.nmw") + " --data " + path("data") +
                " --window-s 2 --report " + path("full.csv")),
            0)
      << err_;

  // Without --window-s the window comes from the model's sidecar.
  ASSERT_EQ(run("eval --model " + path("models/si.nmw") + " --data " + path("data") +
                " --report " + path("inherit.csv")),
            0)
      << err_;
  EXPECT_EQ(slurp(path("inherit.csv")), slurp(path("full.csv")));
  ASSERT_EQ(run("eval --model " + path("models/si.nmw") + " --data " + path("data") +
                " --window-s 2 --subject s02 --report " + path("only.csv")),
            0)
      << err_;
  const std::string full = slurp(path("full.csv"));
  const std::string only = slurp(path("only.csv"));
  const std::size_t row = full.find("\ns02,");
  ASSERT_NE(row, std::string::npos);
  EXPECT_EQ(only, "subject_id,n_segments,n_correct,accuracy" + full.substr(row));

  EXPECT_NE(run("eval --model " + path("models/si.nmw") + " --data " + path("data") +
                " --window-s 2 --subject nosuch --report " + path("x.csv")),
            0);
  EXPECT_NE(err_.find("nosuch"), std::string::npos) << err_;
}

TEST_F(CliTest, EvalNeedsTheConfigSidecar) {
  make_data_and_config();
  ASSERT_EQ(run("train --scenario si --data " + path("data") + " --config " +
                path("small.json") + " --out " + path("models/si.nmw")),
            0)
      << err_;
  fs::copy_file(path("models/si.nmw"), path("stray.nmw"));
  EXPECT_NE(run("eval --model " + path("stray.nmw") + " --data " + path("data") +
                " --window-s 2 --report " + path("x.csv")),
            0);
  EXPECT_NE(err_.find("config"), std::string::npos) << err_;
}

TEST_F(CliTest, BaselineLinearWritesReport) {
  make_data_and_config();
  ASSERT_EQ(run("baseline linear --data " + path("data") + " --config " + path("small.json") +
                " --report " + path("bl.csv")),
            0)
      << err_;
  const std::string report = slurp(path("bl.csv"));
  EXPECT_EQ(report.rfind("subject_id,n_segments,n_correct,accuracy\n", 0), 0u) << report;
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 3);
}

TEST_F(CliTest, StatsCompareEmitsPinnedJson) {
  // Known accuracies: diffs +0.05, +0.10, +0.05, +0.05 give W = 0, n = 4,
  // exact two-sided p = 2/16.
  {
    std::ofstream f(path("a.csv"));
    f << "subject_id,n_segments,n_correct,accuracy\n"
         "s01,100,90,0.9\ns02,100,80,0.8\ns03,100,70,0.7\ns04,100,60,0.6\n";
  }
  {
    std::ofstream f(path("b.csv"));
    f << "subject_id,n_segments,n_correct,accuracy\n"
         "s01,100,85,0.85\ns02,100,70,0.7\ns03,100,65,0.65\ns04,100,55,0.55\n";
  }
  ASSERT_EQ(run("stats compare --a " + path("a.csv") + " --b " + path("b.csv") + " --out " +
                path("cmp.json")),
            0)
      << err_;
  EXPECT_EQ(slurp(path("cmp.json")), "{\"test\":\"wilcoxon\",\"W\":0,\"p\":0.125,\"n\":4}\n");

  // Identical reports carry no paired information; that is an error, not p=1.
  EXPECT_NE(
      run("stats compare --a " + path("a.csv") + " --b " + path("a.csv") + " --out " +
          path("x.json")),
      0);
  EXPECT_NE(err_.find("no information"), std::string::npos) << err_;

  // Subject sets must match exactly.
  {
    std::ofstream f(path("c.csv"));
    f << "subject_id,n_segments,n_correct,accuracy\n"
         "s01,100,85,0.85\ns02,100,70,0.7\ns03,100,65,0.65\ns05,100,55,0.55\n";
  }
  EXPECT_NE(run("stats compare --a " + path("a.csv") + " --b " + path("c.csv") + " --out " +
                path("x.json")),
            0);
  EXPECT_NE(err_.find("s04"), std::string::npos) << err_;
}

TEST_F(CliTest, MalformedReportsAreRejected) {
  {
    std::ofstream f(path("hdr.csv"));
    f << "subject,segments\ns01,1\n";
  }
  {
    std::ofstream f(path("ok.csv"));
    f << "subject_id,n_segments,n_correct,accuracy\ns01,100,90,0.9\n";
  }
  EXPECT_NE(run("stats compare --a " + path("hdr.csv") + " --b " + path("ok.csv") +
                " --out " + path("x.json")),
            0);
  EXPECT_NE(err_.find("header"), std::string::npos) << err_;

  {
    std::ofstream f(path("range.csv"));
    f << "subject_id,n_segments,n_correct,accuracy\ns01,100,101,1.01\n";
  }
  EXPECT_NE(run("stats compare --a " + path("range.csv") + " --b " + path("ok.csv") +
                " --out " + path("x.json")),
            0);
  EXPECT_NE(err_.find("out of range"), std::string::npos) << err_;
}

TEST_F(CliTest, ManifestGuardsSubjectAndRate) {
  ASSERT_EQ(run("synth gen --subjects 1 --minutes 1 --out " + path("data")), 0) << err_;
  {
    std::ofstream f(path("data/manifest.json"));
    f << R"({"recordings":[{"path":"s01.nmm","subject_id":"wrong"}]})";
  }
  EXPECT_NE(run("baseline linear --data " + path("data") + " --report " + path("x.csv")), 0);
  EXPECT_NE(err_.find("s01"), std::string::npos) << err_;
  EXPECT_NE(err_.find("wrong"), std::string::npos) << err_;
}

}  // namespace
