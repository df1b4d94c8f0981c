#include "vfield/pipeline.hpp"
#include "vfield/register.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

using namespace vfield;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
	const auto dir = fs::temp_directory_path() / ("vfield_cli_" + name);
	fs::remove_all(dir);
	fs::create_directories(dir);
	return dir;
}

std::string slurp(const fs::path& p)
{
	std::ifstream in(p, std::ios::binary);
	std::ostringstream s;
	s << in.rdbuf();
	return s.str();
}

struct Run {
	int status = 0;
	std::string err;
};

// Runs the tool with `args`; stderr lands in dir/stderr.txt.
Run vfield_cli(const fs::path& dir, const std::string& args)
{
	const auto err = dir / "stderr.txt";
	const std::string cmd = std::string("\"") + VFIELD_CLI + "\" " + args + " >\"" + (dir / "stdout.txt").string() +
	                        "\" 2>\"" + err.string() + "\"";
	const int raw = std::system(cmd.c_str());
	return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(err)};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

} // namespace

TEST(Cli, HelpForEverySubcommand)
{
	const auto dir = scratch("help");
	for (const char* sub : {"simulate", "train", "detect", "track", "build-field", "render", "register match",
	                        "register fit", "register displacement", "pipeline"}) {
		const auto r = vfield_cli(dir, std::string(sub) + " --help");
		EXPECT_EQ(r.status, 0) << sub;
		EXPECT_NE(slurp(dir / "stdout.txt").find("--"), std::string::npos) << sub;
	}
	EXPECT_NE(vfield_cli(dir, "").status, 0);
}

TEST(Cli, DetectOnEmptySceneGivesEmptyCsv)
{
	const auto dir = scratch("empty_detect");
	ASSERT_EQ(vfield_cli(dir, "simulate --scatter 12 --frames 1 --out " + q(dir / "train")).status, 0);
	ASSERT_EQ(vfield_cli(dir, "train --frames " + q(dir / "train/frames") + " --truth " + q(dir / "train/truth.csv") +
	                              " --boosting-rounds 10 --candidate-pool 40 --model " + q(dir / "model.txt"))
	              .status,
	          0);

	SceneSpec empty = demo_scene(3);
	empty.lanes.clear();
	empty.frames = 2;
	write_frames(dir / "bg", generate(empty).frames);
	const auto r = vfield_cli(dir, "detect --model " + q(dir / "model.txt") + " --frames " + q(dir / "bg") + " --out " +
	                                   q(dir / "dets.csv"));
	ASSERT_EQ(r.status, 0) << r.err;
	std::ifstream in(dir / "dets.csv");
	EXPECT_TRUE(read_detections(in).empty());
}

TEST(Cli, EmptyFieldRendersTheBaseImage)
{
	const auto dir = scratch("empty_field");
	{
		std::ofstream t(dir / "tracklets.csv");
		write_tracklets(t, std::vector<Tracklet>{});
	}
	RasterImage base(40, 30, 0.0);
	for (int y = 0; y < 30; ++y)
		for (int x = 0; x < 40; ++x)
			base(x, y) = (x * 7 + y * 3) % 256 / 255.0;
	write_pgm(dir / "base.pgm", base);

	ASSERT_EQ(vfield_cli(dir, "build-field --tracklets " + q(dir / "tracklets.csv") + " --like " + q(dir / "base.pgm") +
	                              " --out " + q(dir / "field.vff"))
	              .status,
	          0);
	const auto field = read_field(dir / "field.vff");
	EXPECT_EQ(field.geometry().width, 40);
	EXPECT_TRUE(field.histograms().empty());

	ASSERT_EQ(vfield_cli(dir, "render --field " + q(dir / "field.vff") + " --base " + q(dir / "base.pgm") + " --out " +
	                              q(dir / "maps"))
	              .status,
	          0);
	const auto speed = read_ppm(dir / "maps/speed.ppm");
	EXPECT_EQ(speed, to_rgb(read_pgm(dir / "base.pgm")));
	EXPECT_EQ(read_ppm(dir / "maps/direction.ppm"), speed);
}

TEST(Cli, MissingFileIsNamed)
{
	const auto dir = scratch("missing");
	const auto r = vfield_cli(dir, "build-field --tracklets " + q(dir / "nope.csv") +
	                                   " --width 10 --height 10 --out " + q(dir / "f.vff"));
	EXPECT_NE(r.status, 0);
	EXPECT_NE(r.err.find("nope.csv"), std::string::npos) << r.err;
	EXPECT_FALSE(fs::exists(dir / "f.vff"));
}

TEST(Cli, BadConfigIsNamed)
{
	const auto dir = scratch("bad_config");
	{
		std::ofstream c(dir / "cfg.txt");
		c << "blob_sigma = 1\nframe_rte = 5\n";
	}
	{
		std::ofstream t(dir / "tracklets.csv");
		write_tracklets(t, std::vector<Tracklet>{});
	}
	auto r = vfield_cli(dir, "build-field --config " + q(dir / "cfg.txt") + " --tracklets " +
	                             q(dir / "tracklets.csv") + " --width 10 --height 10 --out " + q(dir / "f.vff"));
	EXPECT_NE(r.status, 0);
	EXPECT_NE(r.err.find("frame_rte"), std::string::npos) << r.err;

	r = vfield_cli(dir, "build-field --blob-sigma -2 --tracklets " + q(dir / "tracklets.csv") +
	                        " --width 10 --height 10 --out " + q(dir / "f.vff"));
	EXPECT_NE(r.status, 0);
	EXPECT_NE(r.err.find("blob_sigma"), std::string::npos) << r.err;
}

TEST(Cli, ChainedStagesRerunByteIdentical)
{
	const auto dir = scratch("rerun");
	{
		std::ofstream lanes(dir / "lanes.txt");
		lanes << "4 12 0.2 1 4,48 155,48\n";
		std::ofstream scene(dir / "scene.txt");
		scene << "width = 160\nheight = 96\nframes = 10\nseed = 5\nlanes = lanes.txt\n";
	}
	ASSERT_EQ(vfield_cli(dir, "simulate --scatter 12 --frames 1 --out " + q(dir / "train")).status, 0);
	ASSERT_EQ(vfield_cli(dir, "train --frames " + q(dir / "train/frames") + " --truth " + q(dir / "train/truth.csv") +
	                              " --boosting-rounds 15 --candidate-pool 40 --model " + q(dir / "model.txt") +
	                              " --log " + q(dir / "log.csv"))
	              .status,
	          0);
	ASSERT_EQ(vfield_cli(dir, "simulate --scene " + q(dir / "scene.txt") + " --out " + q(dir / "seq")).status, 0);

	auto chain = [&](const std::string& tag) {
		const auto out = dir / tag;
		fs::create_directories(out);
		EXPECT_EQ(vfield_cli(dir, "detect --model " + q(dir / "model.txt") + " --frames " + q(dir / "seq/frames") +
		                              " --out " + q(out / "dets.csv"))
		              .status,
		          0);
		EXPECT_EQ(vfield_cli(dir, "track --frames " + q(dir / "seq/frames") + " --detections " + q(out / "dets.csv") +
		                              " --out " + q(out / "tracklets.csv"))
		              .status,
		          0);
		EXPECT_EQ(vfield_cli(dir, "build-field --tracklets " + q(out / "tracklets.csv") + " --width 160 --height 96" +
		                              " --out " + q(out / "field.vff"))
		              .status,
		          0);
		EXPECT_EQ(vfield_cli(dir, "render --field " + q(out / "field.vff") + " --out " + q(out / "maps")).status, 0);
		return out;
	};
	const auto a = chain("a"), b = chain("b");
	EXPECT_FALSE(slurp(a / "dets.csv").empty());
	for (const char* name : {"dets.csv", "tracklets.csv", "field.vff", "maps/speed.ppm", "maps/direction.ppm"})
		EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
	const auto log = slurp(dir / "log.csv");
	EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 16);
}

TEST(Cli, RegisterRecoversAShift)
{
	const auto dir = scratch("register");
	RasterImage src(160, 160, 0.0), tgt(160, 160, 0.0);
	for (int y = 0; y < 160; ++y)
		for (int x = 0; x < 160; ++x) {
			auto tex = [](int u, int v) { return 0.5 + 0.25 * std::sin(0.31 * u + 0.17 * v) * std::cos(0.23 * v - 0.11 * u); };
			src(x, y) = tex(x, y);
			tgt(x, y) = tex(x - 3, y + 2);
		}
	{
		std::ofstream s(dir / "src.vfr");
		write_vfr(s, src);
		std::ofstream t(dir / "tgt.vfr");
		write_vfr(t, tgt);
	}
	auto r = vfield_cli(dir, "register match --source " + q(dir / "src.vfr") + " --target " + q(dir / "tgt.vfr") +
	                             " --spacing 20 --patch 31 --search 6 --out " + q(dir / "corr.csv"));
	ASSERT_EQ(r.status, 0) << r.err;
	std::ifstream in(dir / "corr.csv");
	const auto corrs = read_correspondences(in);
	ASSERT_GE(corrs.size(), 9u);
	for (const auto& c : corrs) {
		EXPECT_NEAR(c.target.x - c.source.x, 3.0, 1e-9);
		EXPECT_NEAR(c.target.y - c.source.y, -2.0, 1e-9);
	}
	r = vfield_cli(dir, "register fit --correspondences " + q(dir / "corr.csv") + " --out " + q(dir / "t.txt"));
	ASSERT_EQ(r.status, 0) << r.err;
	std::ifstream tin(dir / "t.txt");
	const auto t = read_transform(tin);
	const Point2 p = t.apply({80.0, 80.0});
	EXPECT_NEAR(p.x, 83.0, 0.05);
	EXPECT_NEAR(p.y, 78.0, 0.05);
}
