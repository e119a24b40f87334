#include "motionforge/io.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

using namespace motionforge;
namespace fs = std::filesystem;

namespace {

// Shared scratch directory with a tiny trained checkpoint.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("mf_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    ASSERT_EQ(run("train --out " + path("ck.json") +
                  " --clips 6 --steps 10 --batch 2 --width 16 --layers 1 --heads 2 --ffn 32 --diffusion-steps 8"
                  " --length 16 --k 2 --grid-out " + path("corr.grid") + " --scene-out " + path("corr.obj") + " --seed 1"),
              0);
  }
  static void TearDownTestSuite() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + std::string(MF_CLI) + " " + args + " >" + path("stdout.txt") + " 2>" + path("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, VoxelizeReproducesGoldenGrid) {
  ASSERT_EQ(run("voxelize --obj " + mftest::data_path("unit_cube.obj") + " --out " + path("cube.grid") +
                " --lo -0.5 -0.5 -0.5 --hi 1.5 1.5 1.5 --cell 0.25"),
            0);
  EXPECT_EQ(io::read_file(path("cube.grid")), io::read_file(mftest::data_path("unit_cube.grid")));
}

TEST_F(Cli, SampleWritesOneEpisode) {
  ASSERT_EQ(run("sample --checkpoint " + path("ck.json") + " --grid " + path("corr.grid") +
                " --start 1 0 --goal 2.5 0.1 --seed 4 --out " + path("s.json")),
            0);
  const auto m = io::load_motion(path("s.json"));
  ASSERT_EQ(m.frames.size(), 16u);
  EXPECT_EQ(m.frames.back()(0, 0), 2.5);
  EXPECT_EQ(m.frames.back()(0, 1), 0.1);
  // Same seed, same bytes.
  ASSERT_EQ(run("sample --checkpoint " + path("ck.json") + " --grid " + path("corr.grid") +
                " --start 1 0 --goal 2.5 0.1 --seed 4 --out " + path("s2.json")),
            0);
  EXPECT_EQ(io::read_file(path("s.json")), io::read_file(path("s2.json")));
}

TEST_F(Cli, GenerateThreeSubgoalsGives44Frames) {
  io::save_json(path("goals.json"), io::json::parse(R"({"start":[1,0],"subgoals":[{"xy":[2,0]},{"xy":[3,0.2]},{"xy":[4,0]}]})"));
  ASSERT_EQ(run("generate --checkpoint " + path("ck.json") + " --grid " + path("corr.grid") + " --subgoals " +
                path("goals.json") + " --seed 5 --out " + path("g.json")),
            0);
  const auto m = io::load_motion(path("g.json"));
  EXPECT_EQ(m.frames.size(), 44u);
  EXPECT_EQ(m.frames[15](0, 0), 2.0);
  EXPECT_EQ(m.frames[43](0, 0), 4.0);
}

TEST_F(Cli, ConfigFromEnvironment) {
  io::save_json(path("cfg.json"), {{"paths", {{"checkpoint", "ck.json"}, {"grid", "corr.grid"}}},
                                   {"diffusion", {{"steps", 8}, {"length", 16}, {"k", 2}}}});
  EXPECT_EQ(run("sample --goal 2 0 --out " + path("e.json"), "MOTIONFORGE_CONFIG=" + path("cfg.json")), 0);
  EXPECT_EQ(io::load_motion(path("e.json")).frames.size(), 16u);
  EXPECT_EQ(run("sample --goal 2 0 --out " + path("e.json")), 1);  // no checkpoint anywhere
}

TEST_F(Cli, AnalysisSubcommands) {
  ASSERT_EQ(run("sample --checkpoint " + path("ck.json") + " --goal 2 0 --start 1 0 --out " + path("a.json")), 0);
  EXPECT_EQ(run("annotate --motion " + path("a.json") + " --scene " + path("corr.obj") + " --out " + path("c.json")), 0);
  EXPECT_EQ(io::contacts_from_json(io::load_json(path("c.json"))).size(), 16u);
  EXPECT_EQ(run("stats --motion " + path("a.json") + " --scene " + path("corr.obj") + " --out " + path("st.json")), 0);
  EXPECT_TRUE(io::load_json(path("st.json")).contains("overall"));
  EXPECT_EQ(run("camera-track --motion " + path("a.json") + " --scene " + path("corr.obj") + " --interval 5 --out " +
                path("cam.json")),
            0);
  const auto cam = io::load_json(path("cam.json"));
  EXPECT_EQ(cam.at("keyframes"), io::json({0, 5, 10, 15}));
  EXPECT_EQ(cam.at("frames").size(), 16u);
  io::save_json(path("ev.json"), io::events_to_json({}));
  EXPECT_EQ(run("augment --motion " + path("a.json") + " --events " + path("ev.json") + " --out " + path("au.json")), 0);
  EXPECT_EQ(io::read_file(path("au.json")), io::read_file(path("a.json")));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("voxelize --obj " + mftest::data_path("unit_cube.obj")), 1);  // missing --out
  EXPECT_EQ(run("voxelize --obj /no/such.obj --out x"), 1);
  io::write_file_atomic(path("broken.json"), "{\"fps\": 10, \"joints\": [");
  EXPECT_EQ(run("stats --motion " + path("broken.json") + " --scene " + path("corr.obj")), 2);
  io::write_file_atomic(path("bad.obj"), "v 0 0 0\nf 1 2 3\n");
  EXPECT_EQ(run("voxelize --obj " + path("bad.obj") + " --out " + path("bad.grid")), 2);
  EXPECT_FALSE(fs::exists(path("bad.grid")));
}
