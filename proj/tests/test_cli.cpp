// End-to-end checks of the command-line surface: exit codes, config
// precedence, reproducibility of output bytes, and the committed golden CSV.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef VSHUFFLE_CLI_PATH
#error "VSHUFFLE_CLI_PATH must be defined"
#endif
#ifndef VSHUFFLE_GOLDEN_DIR
#error "VSHUFFLE_GOLDEN_DIR must be defined"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunOut {
    int exit_code = -1;
    std::string output;
};

RunOut run_cli(const std::string& args, const std::string& cwd) {
    const std::string cmd = "cd '" + cwd + "' && '" + std::string(VSHUFFLE_CLI_PATH) + "' " + args +
                            " 2>&1";
    RunOut out;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (size_t got = fread(buf, 1, sizeof buf, pipe)) out.output.append(buf, got);
    const int status = pclose(pipe);
    out.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("vshuffle_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

const std::string kTrainArgs =
    "train --image-size 8 --base-width 8 --steps 60 --batch-size 2 --seed 3 --out model.vshf";

}  // namespace

TEST_CASE("train writes a checkpoint reproducibly; steps=0 keeps initial weights") {
    TempDir dir;
    auto r1 = run_cli(kTrainArgs, dir.path.string());
    CHECK(r1.exit_code == 0);
    CHECK(fs::exists(dir.path / "model.vshf"));
    const std::string bytes1 = slurp(dir.path / "model.vshf");

    fs::remove(dir.path / "model.vshf");
    auto r2 = run_cli(kTrainArgs, dir.path.string());
    CHECK(r2.exit_code == 0);
    CHECK(slurp(dir.path / "model.vshf") == bytes1);

    auto r3 = run_cli("train --image-size 8 --base-width 8 --steps 0 --seed 3 --out init.vshf",
                      dir.path.string());
    CHECK(r3.exit_code == 0);
    CHECK(fs::exists(dir.path / "init.vshf"));
    CHECK(slurp(dir.path / "init.vshf") != bytes1);
}

TEST_CASE("stylize validates usage and produces deterministic bytes") {
    TempDir dir;
    REQUIRE(run_cli(kTrainArgs, dir.path.string()).exit_code == 0);
    const std::string common =
        " --checkpoint model.vshf --content texture:stripes:5 --style texture:blobs:9 --T 6 "
        "--inner-steps 2 --seed 4";

    // method/style-count mismatch is a usage error
    auto bad = run_cli("stylize --method ad --n 2" + common, dir.path.string());
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("n") != std::string::npos);

    // missing checkpoint: exit 2, no partial outputs
    auto missing = run_cli(
        "stylize --checkpoint nope.vshf --content texture:stripes:5 --style texture:blobs:9 "
        "--out-dir gone",
        dir.path.string());
    CHECK(missing.exit_code == 2);
    CHECK_FALSE(fs::exists(dir.path / "gone"));

    auto a = run_cli("stylize --method vshuffle --out-dir o1" + common, dir.path.string());
    CHECK(a.exit_code == 0);
    auto b = run_cli("stylize --method vshuffle --out-dir o2" + common, dir.path.string());
    CHECK(b.exit_code == 0);
    CHECK(slurp(dir.path / "o1/stylized.png") == slurp(dir.path / "o2/stylized.png"));

    // run records match except the timing field and the differing out_dir
    auto ra = json::parse(slurp(dir.path / "o1/stylized.run.json"));
    auto rb = json::parse(slurp(dir.path / "o2/stylized.run.json"));
    ra.erase("timing_ms");
    rb.erase("timing_ms");
    ra["config"].erase("out_dir");
    rb["config"].erase("out_dir");
    CHECK(ra == rb);
}

TEST_CASE("alpha 0 vshuffle equals ad at the command level") {
    TempDir dir;
    REQUIRE(run_cli(kTrainArgs, dir.path.string()).exit_code == 0);
    const std::string common =
        " --checkpoint model.vshf --content texture:stripes:5 --style texture:blobs:9 --T 6 "
        "--inner-steps 2 --seed 4";
    CHECK(run_cli("stylize --method vshuffle --alpha 0 --out-dir va" + common, dir.path.string())
              .exit_code == 0);
    CHECK(run_cli("stylize --method ad --out-dir ad" + common, dir.path.string()).exit_code == 0);
    CHECK(slurp(dir.path / "va/stylized.png") == slurp(dir.path / "ad/stylized.png"));
}

TEST_CASE("run record echoes the paper-default configuration") {
    TempDir dir;
    REQUIRE(run_cli(kTrainArgs, dir.path.string()).exit_code == 0);
    // T reduced for runtime; every other default must echo as-is
    auto r = run_cli(
        "stylize --checkpoint model.vshf --content texture:stripes:5 --style texture:blobs:9 "
        "--T 6 --inner-steps 1 --out-dir rec",
        dir.path.string());
    REQUIRE(r.exit_code == 0);
    auto rec = json::parse(slurp(dir.path / "rec/stylized.run.json"));
    CHECK(rec["config"]["alpha"] == 0.4);
    CHECK(rec["config"]["beta"] == 0.24);
    CHECK(rec["config"]["t1"] == 0.2);
    CHECK(rec["config"]["t2"] == 0.9);
    CHECK(rec["config"]["lr"] == 0.05);
    CHECK(rec["effective_blocks"] == json({10, 11, 12, 13, 14, 15}));

    // defaults without --T: the echoed T is the paper's 200
    auto full = json::parse(slurp(dir.path / "rec/stylized.run.json"));
    CHECK(full["config"]["T"] == 6);
    // and the built-in default in a fresh echo
    auto help = run_cli("stylize --help", dir.path.string());
    CHECK(help.exit_code == 0);
}

TEST_CASE("config file is applied and flags take precedence") {
    TempDir dir;
    REQUIRE(run_cli(kTrainArgs, dir.path.string()).exit_code == 0);
    {
        std::ofstream f(dir.path / "cfg.json");
        f << R"({"checkpoint":"model.vshf","content":"texture:stripes:5",
                 "styles":["texture:blobs:9"],"method":"vshuffle","T":6,
                 "inner_steps":2,"alpha":0.9,"seed":4,"out_dir":"fromfile"})";
    }
    auto file_run = run_cli("stylize --config cfg.json", dir.path.string());
    CHECK(file_run.exit_code == 0);
    auto rec = json::parse(slurp(dir.path / "fromfile/stylized.run.json"));
    CHECK(rec["config"]["alpha"] == 0.9);

    // flag overrides the file: alpha 0 must reproduce the ad output bytes
    CHECK(run_cli("stylize --config cfg.json --alpha 0 --out-dir flagwin", dir.path.string())
              .exit_code == 0);
    CHECK(run_cli("stylize --config cfg.json --method ad --alpha 0 --out-dir adref", dir.path.string())
              .exit_code == 0);
    CHECK(slurp(dir.path / "flagwin/stylized.png") == slurp(dir.path / "adref/stylized.png"));

    // schema rejection: unknown key
    {
        std::ofstream f(dir.path / "bad.json");
        f << R"({"checkpoitn":"model.vshf"})";
    }
    CHECK(run_cli("stylize --config bad.json", dir.path.string()).exit_code == 2);
}

TEST_CASE("sweep validates the grid and writes parallelism-independent CSV") {
    TempDir dir;
    REQUIRE(run_cli(kTrainArgs, dir.path.string()).exit_code == 0);
    {
        std::ofstream f(dir.path / "empty.json");
        f << R"({"base":{"checkpoint":"model.vshf","content":"texture:stripes:5",
                 "styles":["texture:blobs:9"],"T":5,"inner_steps":1},"grid":[]})";
    }
    CHECK(run_cli("sweep --config empty.json", dir.path.string()).exit_code == 2);

    {
        std::ofstream f(dir.path / "one.json");
        f << R"({"base":{"checkpoint":"model.vshf","content":"texture:stripes:5",
                 "styles":["texture:blobs:9"],"T":5,"inner_steps":1},
                 "grid":[{"method":"vshuffle","beta":0.24,"alpha":0.4,"n":1,"m":1,"seed":0}],
                 "style_pool":1,"out_dir":"one_out"})";
    }
    auto one = run_cli("sweep --config one.json", dir.path.string());
    CHECK(one.exit_code == 0);
    const std::string csv = slurp(dir.path / "one_out/sweep.csv");
    // exactly one data row, flagged pareto
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
    CHECK(csv.find(",1\n") != std::string::npos);

    {
        std::ofstream f(dir.path / "grid.json");
        f << R"({"base":{"checkpoint":"model.vshf","content":"texture:stripes:5",
                 "styles":["texture:blobs:9"],"T":5,"inner_steps":1},
                 "grid":[{"method":"vshuffle","beta":0.24,"alpha":0.4,"n":1,"m":1,"seed":0},
                         {"method":"vshuffle","beta":0.5,"alpha":0.4,"n":2,"m":1,"seed":0},
                         {"method":"ad","beta":0.24,"alpha":0.4,"n":1,"m":1,"seed":0}],
                 "style_pool":2,"out_dir":"g1"})";
    }
    CHECK(run_cli("sweep --config grid.json --parallelism 4", dir.path.string()).exit_code == 0);
    CHECK(run_cli("sweep --config grid.json --parallelism 1 --out-dir g2", dir.path.string())
              .exit_code == 0);
    CHECK(slurp(dir.path / "g1/sweep.csv") == slurp(dir.path / "g2/sweep.csv"));

    // VSHUFFLE_THREADS caps workers without changing bytes
    setenv("VSHUFFLE_THREADS", "1", 1);
    CHECK(run_cli("sweep --config grid.json --parallelism 4 --out-dir g3", dir.path.string())
              .exit_code == 0);
    unsetenv("VSHUFFLE_THREADS");
    CHECK(slurp(dir.path / "g1/sweep.csv") == slurp(dir.path / "g3/sweep.csv"));

    // a failing cell is reported, the sweep continues, and the exit is nonzero
    {
        std::ofstream f(dir.path / "fail.json");
        f << R"({"base":{"checkpoint":"model.vshf","content":"texture:stripes:5",
                 "styles":["texture:blobs:9"],"T":5,"inner_steps":1},
                 "grid":[{"method":"vshuffle","beta":0.24,"alpha":0.4,"n":1,"m":1,"seed":0},
                         {"method":"vshuffle","beta":0.24,"alpha":0.4,"n":7,"m":1,"seed":0}],
                 "style_pool":2,"out_dir":"fail_out"})";
    }
    auto failing = run_cli("sweep --config fail.json", dir.path.string());
    CHECK(failing.exit_code == 1);
    CHECK(failing.output.find("cell failed") != std::string::npos);
    const std::string fail_csv = slurp(dir.path / "fail_out/sweep.csv");
    CHECK(std::count(fail_csv.begin(), fail_csv.end(), '\n') == 3);  // header + both cells
    CHECK(fail_csv.find("nan") != std::string::npos);
}

TEST_CASE("pca and ablate-axis emit their artifacts deterministically") {
    TempDir dir;
    REQUIRE(run_cli(kTrainArgs, dir.path.string()).exit_code == 0);
    auto p1 = run_cli(
        "pca --checkpoint model.vshf --styles texture:blobs:9 --n 2 --T 5 --t 3 --block 12 "
        "--out-dir p1",
        dir.path.string());
    CHECK(p1.exit_code == 0);
    CHECK(fs::exists(dir.path / "p1/pca_style1.png"));
    CHECK(fs::exists(dir.path / "p1/pca_style2.png"));
    auto p2 = run_cli(
        "pca --checkpoint model.vshf --styles texture:blobs:9 --n 2 --T 5 --t 3 --block 12 "
        "--out-dir p2",
        dir.path.string());
    CHECK(p2.exit_code == 0);
    CHECK(slurp(dir.path / "p1/pca_style1.png") == slurp(dir.path / "p2/pca_style1.png"));

    auto a1 = run_cli(
        "ablate-axis --checkpoint model.vshf --content texture:stripes:5 --style texture:blobs:9 "
        "--T 5 --inner-steps 1 --out-dir a1",
        dir.path.string());
    CHECK(a1.exit_code == 0);
    CHECK(fs::exists(dir.path / "a1/grid.png"));
    CHECK(fs::exists(dir.path / "a1/ablate.csv"));
    auto a2 = run_cli(
        "ablate-axis --checkpoint model.vshf --content texture:stripes:5 --style texture:blobs:9 "
        "--T 5 --inner-steps 1 --out-dir a2",
        dir.path.string());
    CHECK(slurp(dir.path / "a1/ablate.csv") == slurp(dir.path / "a2/ablate.csv"));
}

TEST_CASE("verify command passes and unknown commands are usage errors") {
    TempDir dir;
    auto v = run_cli("verify", dir.path.string());
    CHECK(v.exit_code == 0);
    CHECK(v.output.find("verification suite passed") != std::string::npos);
    CHECK(run_cli("frobnicate", dir.path.string()).exit_code == 2);
    CHECK(run_cli("", dir.path.string()).exit_code == 2);
}

// The documented repro config regenerates the committed golden CSV bitwise.
TEST_CASE("golden sweep CSV regenerates bitwise") {
    const fs::path golden = fs::path(VSHUFFLE_GOLDEN_DIR) / "sweep_golden.csv";
    REQUIRE(fs::exists(golden));
    const fs::path cfg_src = fs::path(VSHUFFLE_GOLDEN_DIR) / "sweep_golden.json";
    REQUIRE(fs::exists(cfg_src));

    TempDir dir;
    REQUIRE(run_cli("train --image-size 8 --base-width 8 --steps 80 --batch-size 2 --seed 11 "
                    "--out golden_model.vshf",
                    dir.path.string())
                .exit_code == 0);
    fs::copy_file(cfg_src, dir.path / "sweep_golden.json");
    auto r = run_cli("sweep --config sweep_golden.json", dir.path.string());
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(dir.path / "golden_out/sweep.csv") == slurp(golden));
}
