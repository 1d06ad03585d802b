// End-to-end tests of the ovsal command-line tool: every subcommand runs as a
// subprocess in a fresh directory, outputs must be byte-identical across
// repeated runs with the same seed, manifests must replay, and exit codes must
// follow the 0/1/2 contract.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "ovsal/io.hpp"

namespace fs = std::filesystem;

namespace {

std::string bin() { return OVSAL_BIN; }

// Runs a shell command, returns the process exit code.
int run(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

int run_in(const fs::path& dir, const std::string& args) {
  return run("cd '" + dir.string() + "' && '" + bin() + "' " + args + " > stdout.txt 2> stderr.txt");
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ovsal_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool same_bytes(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

// Every regular file in a (recursively), byte-compared against the same
// relative path in b. Manifests are excluded: their argv / wall_seconds differ.
void check_trees_equal(const fs::path& a, const fs::path& b) {
  int n_compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.size() > 14 && name.substr(name.size() - 14) == ".manifest.json") continue;
    if (name == "stdout.txt" || name == "stderr.txt") continue;
    const fs::path other = b / fs::relative(e.path(), a);
    INFO("file: " << e.path().string());
    REQUIRE(fs::exists(other));
    CHECK(same_bytes(e.path(), other));
    ++n_compared;
  }
  CHECK(n_compared > 0);
}

void write_gaze_csv(const fs::path& p, double yaw_a, double yaw_b) {
  std::string s = "t,gx,gy,gz,pitch,yaw,roll\n";
  for (int i = 0; i < 8; ++i)
    s += std::to_string(0.05 * i) + ",1,0,0,0," + std::to_string(yaw_a) + ",0\n";
  for (int i = 8; i < 16; ++i)
    s += std::to_string(0.05 * i) + ",1,0,0,0," + std::to_string(yaw_b) + ",0\n";
  ovsal::io::write_text_file(p.string(), s);
}

// Tiny synthetic dataset shared by the eval/train/ablate cases.
void gen_dataset(const fs::path& dir, int count, int seed) {
  REQUIRE(run_in(dir, "synth-gen --out-dir ds --count " + std::to_string(count) +
                          " --grid 32x16 --duration 0.5 --fps 8 --rate 8000 --seed " +
                          std::to_string(seed)) == 0);
}

const std::string kTinyModel =
    " --channels 4 --frames 2 --frame-step 2 --heads 2 --schedule 4,8,8,8,8,8,8";

}  // namespace

TEST_CASE("cli: version, help and argument errors") {
  const fs::path d = fresh_dir("basic");
  CHECK(run_in(d, "--version") == 0);
  CHECK(slurp(d / "stdout.txt") == "0.1.0\n");

  CHECK(run_in(d, "--help") == 0);
  CHECK(slurp(d / "stdout.txt").find("Subcommands") != std::string::npos);

  CHECK(run_in(d, "fixations --help") == 0);
  CHECK(slurp(d / "stdout.txt").find("--gaze") != std::string::npos);

  CHECK(run_in(d, "") == 1);                       // subcommand is required
  CHECK(run_in(d, "no-such-command") == 1);        // unknown subcommand
  CHECK(run_in(d, "bench --no-such-flag") == 1);   // unknown flag
  CHECK(slurp(d / "stderr.txt").find("error") != std::string::npos);
  CHECK(run_in(d, "fixations --out only.csv") == 1);  // missing required option
}

TEST_CASE("cli: fixations and salmap are deterministic") {
  const fs::path a = fresh_dir("fix_a"), b = fresh_dir("fix_b");
  for (const auto& d : {a, b}) {
    write_gaze_csv(d / "gaze.csv", 0.0, 30.0);
    REQUIRE(run_in(d, "fixations --gaze gaze.csv --out fix.csv --fps 10") == 0);
    REQUIRE(run_in(d, "salmap --gaze gaze.csv --out-dir maps --grid 32x16 --fps 4 --png") == 0);
  }
  check_trees_equal(a, b);

  const std::string fix = slurp(a / "fix.csv");
  CHECK(fix.rfind("frame,lat,lon,count\n", 0) == 0);
  CHECK(std::count(fix.begin(), fix.end(), '\n') > 1);  // header + at least one row
  CHECK(fs::exists(a / "maps/salmap_0000.pfm"));
  CHECK(fs::exists(a / "maps/salmap_0000.png"));
  CHECK(fs::exists(a / "fix.csv.manifest.json"));

  // Missing input file -> invalid input exit code.
  CHECK(run_in(a, "fixations --gaze nope.csv --out x.csv") == 1);
}

TEST_CASE("cli: synth-gen is deterministic and its manifest replays") {
  const fs::path a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
  gen_dataset(a, 2, 11);
  gen_dataset(b, 2, 11);
  check_trees_equal(a, b);

  const fs::path c = fresh_dir("gen_c");
  gen_dataset(c, 2, 12);  // different seed -> different bytes
  CHECK_FALSE(same_bytes(a / "ds/s000/audio.wav", c / "ds/s000/audio.wav"));

  // Replay the manifest argv verbatim (it ran with cwd = a) and check the
  // primary output is reproduced bit for bit.
  const auto manifest = nlohmann::json::parse(slurp(a / "ds/dataset.json.manifest.json"));
  CHECK(manifest.at("command") == "synth-gen");
  CHECK(manifest.at("seed") == 11);
  CHECK(manifest.at("version") == "0.1.0");
  CHECK(manifest.at("wall_seconds").get<double>() >= 0.0);
  const std::string before = slurp(a / "ds/dataset.json");
  std::string cmd = "cd '" + a.string() + "'";
  bool first = true;
  for (const auto& arg : manifest.at("argv")) {
    cmd += first ? " && '" + bin() + "'" : " '" + arg.get<std::string>() + "'";
    first = false;
  }
  REQUIRE(run(cmd + " > /dev/null 2>&1") == 0);
  CHECK(slurp(a / "ds/dataset.json") == before);
  CHECK(same_bytes(a / "ds/s000/frame_0000.pfm", b / "ds/s000/frame_0000.pfm"));
}

TEST_CASE("cli: eval writes the six metrics deterministically") {
  const fs::path a = fresh_dir("eval_a"), b = fresh_dir("eval_b");
  for (const auto& d : {a, b}) {
    gen_dataset(d, 1, 21);
    REQUIRE(run_in(d, "eval --pred ds/s000/gt_0000.pfm --fix ds/s000/fixations.csv "
                      "--out metrics.json --weighting uniform --sauc-splits 8 --seed 3") == 0);
  }
  CHECK(same_bytes(a / "metrics.json", b / "metrics.json"));

  const auto j = nlohmann::json::parse(slurp(a / "metrics.json"));
  for (const char* k : {"nss", "auc_judd", "s_auc", "cc", "sim", "kld"}) {
    INFO("metric: " << k);
    REQUIRE(j.at("metrics").contains(k));
    CHECK(std::isfinite(j.at("metrics").at(k).get<double>()));
  }
  // The prediction is the smoothed ground truth itself, so ranking metrics
  // must beat chance clearly.
  CHECK(j.at("metrics").at("auc_judd").get<double>() > 0.8);
  CHECK(j.at("metrics").at("nss").get<double>() > 1.0);
  CHECK(j.at("negatives") == "uniform");

  // Same run with an explicit reference map and a negative pool.
  REQUIRE(run_in(a, "eval --pred ds/s000/gt_0000.pfm --fix ds/s000/fixations.csv "
                    "--gt ds/s000/gt_0000.pfm --neg ds/s000/fixations.csv "
                    "--out metrics2.json --weighting sinusoidal --sauc-splits 8 --seed 3") == 0);
  const auto j2 = nlohmann::json::parse(slurp(a / "metrics2.json"));
  CHECK(j2.at("negatives") == "file");
  CHECK(j2.at("metrics").at("cc").get<double>() == doctest::Approx(1.0));
  CHECK(j2.at("metrics").at("sim").get<double>() == doctest::Approx(1.0));
}

TEST_CASE("cli: consistency report over two modes") {
  const fs::path a = fresh_dir("cons_a"), b = fresh_dir("cons_b");
  for (const auto& d : {a, b}) {
    fs::create_directories(d / "subj/m1");
    fs::create_directories(d / "subj/m2");
    write_gaze_csv(d / "subj/m1/s1.csv", 0.0, 5.0);
    write_gaze_csv(d / "subj/m1/s2.csv", 2.0, 7.0);
    write_gaze_csv(d / "subj/m2/s1.csv", 40.0, 45.0);
    write_gaze_csv(d / "subj/m2/s2.csv", 42.0, 47.0);
    REQUIRE(run_in(d, "consistency --subjects subj --grid 32x16 --repeats 3 --seed 5 "
                      "--out cons.json") == 0);
  }
  CHECK(same_bytes(a / "cons.json", b / "cons.json"));

  const auto j = nlohmann::json::parse(slurp(a / "cons.json"));
  CHECK(j.at("baseline").contains("nss"));
  REQUIRE(j.at("pairs").contains("m1|m2"));
  CHECK(j.at("pct_change").contains("m1|m2"));
  // Within-mode agreement (subjects nearly coincide) beats the cross-mode
  // pair, whose gaze sits 40 degrees away.
  CHECK(j.at("pairs").at("m1|m2").at("cc").get<double>() <
        j.at("baseline").at("cc").get<double>());

  // A flat directory (no mode subdirectories) is treated as one mode.
  fs::create_directories(a / "flat");
  write_gaze_csv(a / "flat/s1.csv", 0.0, 5.0);
  write_gaze_csv(a / "flat/s2.csv", 2.0, 7.0);
  REQUIRE(run_in(a, "consistency --subjects flat --grid 32x16 --repeats 2 --seed 5 "
                    "--out flat.json") == 0);
  const auto jf = nlohmann::json::parse(slurp(a / "flat.json"));
  CHECK(jf.at("pairs").empty());
  CHECK(std::isfinite(jf.at("baseline").at("nss").get<double>()));
}

TEST_CASE("cli: audio-features and video-attrs") {
  const fs::path a = fresh_dir("feat_a"), b = fresh_dir("feat_b");
  for (const auto& d : {a, b}) {
    gen_dataset(d, 1, 31);
    REQUIRE(run_in(d, "audio-features --audio ds/s000/audio.wav --out-dir af "
                      "--grid 32x16 --png --mel") == 0);
    fs::create_directories(d / "frames");
    for (const auto& e : fs::directory_iterator(d / "ds/s000"))
      if (e.path().filename().string().rfind("frame_", 0) == 0)
        fs::copy_file(e.path(), d / "frames" / e.path().filename());
    REQUIRE(run_in(d, "video-attrs --frames frames --out va.json") == 0);
  }
  check_trees_equal(a, b);

  const auto af = nlohmann::json::parse(slurp(a / "af/attributes.json"));
  CHECK(af.at("sample_rate").get<double>() == 8000.0);
  CHECK(af.at("duration_s").get<double>() == doctest::Approx(0.5));
  CHECK(af.at("zcr").get<double>() > 0.0);
  CHECK(std::isfinite(af.at("sef").get<double>()));
  for (const char* f : {"aem.pfm", "aem.png", "mel_w.pfm", "mel_z.pfm"})
    CHECK(fs::exists(a / "af" / f));

  const auto va = nlohmann::json::parse(slurp(a / "va.json"));
  CHECK(va.at("n_frames") == 4);
  CHECK(va.at("per_frame").size() == 4);
  CHECK(va.at("brightness_mean").get<double>() > 0.0);
  CHECK(va.at("si").get<double>() > 0.0);
}

TEST_CASE("cli: train is deterministic and its manifest replays") {
  const fs::path a = fresh_dir("train_a"), b = fresh_dir("train_b");
  for (const auto& d : {a, b}) {
    gen_dataset(d, 2, 41);
    REQUIRE(run_in(d, "train --dataset ds/dataset.json --out-dir run" + kTinyModel +
                          " --steps 3 --batch 2 --lr 0.001 --seed 9") == 0);
  }
  CHECK(same_bytes(a / "run/params.bin", b / "run/params.bin"));
  CHECK(same_bytes(a / "run/train_log.csv", b / "run/train_log.csv"));
  CHECK(same_bytes(a / "run/model_config.json", b / "run/model_config.json"));

  const std::string log = slurp(a / "run/train_log.csv");
  CHECK(log.rfind("step,lr,l1,cc,kl,bce,total\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 4);  // header + 3 steps

  // Replay via the manifest argv.
  const auto manifest = nlohmann::json::parse(slurp(a / "run/params.bin.manifest.json"));
  const std::string before = slurp(a / "run/params.bin");
  std::string cmd = "cd '" + a.string() + "'";
  bool first = true;
  for (const auto& arg : manifest.at("argv")) {
    cmd += first ? " && '" + bin() + "'" : " '" + arg.get<std::string>() + "'";
    first = false;
  }
  REQUIRE(run(cmd + " > /dev/null 2>&1") == 0);
  CHECK(slurp(a / "run/params.bin") == before);

  // A diverging loss is an internal error: exit code 2.
  CHECK(run_in(a, "train --dataset ds/dataset.json --out-dir bad" + kTinyModel +
                      " --steps 3 --batch 1 --lr 1e15 --seed 9") == 2);
  CHECK(slurp(a / "stderr.txt").find("internal error") != std::string::npos);
  // A window longer than the clips is invalid input: exit code 1.
  CHECK(run_in(a, "train --dataset ds/dataset.json --out-dir bad2" + kTinyModel +
                      " --frames 9 --steps 1 --seed 9") == 1);
}

TEST_CASE("cli: ablate emits one row per variant") {
  const fs::path a = fresh_dir("abl_a"), b = fresh_dir("abl_b");
  for (const auto& d : {a, b}) {
    gen_dataset(d, 2, 51);
    REQUIRE(run_in(d, "ablate --train-dataset ds/dataset.json --test-dataset ds/dataset.json "
                      "--out-dir abl --axes audio_mode" + kTinyModel +
                          " --steps 1 --batch 1 --lr 0.001 --frames-per-sample 1 "
                          "--sauc-splits 4 --seed 9") == 0);
  }
  CHECK(same_bytes(a / "abl/ablation.csv", b / "abl/ablation.csv"));
  CHECK(same_bytes(a / "abl/ablation.json", b / "abl/ablation.json"));

  const std::string csv = slurp(a / "abl/ablation.csv");
  CHECK(csv.rfind("axis,value,nss,auc_judd,s_auc,cc,sim,kld\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + mute/mono/ambisonics
  CHECK(csv.find("audio_mode,mute,") != std::string::npos);
  CHECK(csv.find("audio_mode,ambisonics,") != std::string::npos);

  const auto j = nlohmann::json::parse(slurp(a / "abl/ablation.json"));
  CHECK(j.at("rows").size() == 3);

  // Unknown axis name is invalid input.
  CHECK(run_in(a, "ablate --train-dataset ds/dataset.json --test-dataset ds/dataset.json "
                  "--out-dir abl2 --axes bogus" + kTinyModel + " --steps 1 --seed 9") == 1);
}

TEST_CASE("cli: bench validates serial/parallel agreement") {
  const fs::path d = fresh_dir("bench");
  REQUIRE(run_in(d, "bench --grid 64x32 --frames 2 --repeat 1 --out bench.json") == 0);
  const auto j = nlohmann::json::parse(slurp(d / "bench.json"));
  REQUIRE(j.at("rows").size() == 4);
  for (const auto& row : j.at("rows")) {
    INFO("kernel: " << row.at("kernel").get<std::string>());
    CHECK(row.at("bitwise_equal") == true);
    CHECK(row.at("serial_ms").get<double>() > 0.0);
  }
  const std::string table = slurp(d / "stdout.txt");
  CHECK(table.find("kernel") != std::string::npos);
  CHECK(table.find("smooth") != std::string::npos);
}
