#include "vfield/sim.hpp"
#include "vfield/track.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

using namespace vfield;

namespace {

Detection det(double x, double y, double orientation_deg, int frame = 0)
{
	Detection d;
	d.frame = frame;
	d.centre = {x, y};
	d.orientation = radians(orientation_deg);
	d.pixel_count = 20;
	return d;
}

double lerp_sample(const RasterImage& img, double x, double y)
{
	const int ix = static_cast<int>(std::floor(x)), iy = static_cast<int>(std::floor(y));
	const double fx = x - ix, fy = y - iy;
	auto at = [&](int u, int v) { return img(std::min(u, img.width() - 1), std::min(v, img.height() - 1)); };
	return (1 - fx) * (1 - fy) * at(ix, iy) + fx * (1 - fy) * at(ix + 1, iy) + (1 - fx) * fy * at(ix, iy + 1) +
	       fx * fy * at(ix + 1, iy + 1);
}

double oracle_sad(const RasterImage& ia, const RasterImage& ib, const Detection& a, const Detection& b)
{
	double best = std::numeric_limits<double>::infinity();
	for (double flip : {0.0, std::numbers::pi}) {
		double s = 0.0;
		for (int j = 0; j < 8; ++j)
			for (int i = 0; i < 16; ++i) {
				const double along = i - 7.5, across = j - 3.5;
				const double ta = a.orientation, tb = b.orientation + flip;
				const double xa = a.centre.x + along * std::cos(ta) - across * std::sin(ta);
				const double ya = a.centre.y + along * std::sin(ta) + across * std::cos(ta);
				const double xb = b.centre.x + along * std::cos(tb) - across * std::sin(tb);
				const double yb = b.centre.y + along * std::sin(tb) + across * std::cos(tb);
				s += std::abs(lerp_sample(ia, xa, ya) - lerp_sample(ib, xb, yb));
			}
		best = std::min(best, s);
	}
	return best;
}

std::vector<Match> brute_mutual(std::size_t na, std::size_t nb, const std::vector<std::vector<double>>& score)
{
	constexpr double inf = std::numeric_limits<double>::infinity();
	std::vector<Match> out;
	for (std::size_t i = 0; i < na; ++i) {
		int bj = -1;
		for (std::size_t j = 0; j < nb; ++j)
			if (std::isfinite(score[i][j]) && (bj < 0 || score[i][j] < score[i][bj]))
				bj = static_cast<int>(j);
		if (bj < 0)
			continue;
		int bi = -1;
		for (std::size_t k = 0; k < na; ++k)
			if (std::isfinite(score[k][bj]) && (bi < 0 || score[k][bj] < score[bi][bj]))
				bi = static_cast<int>(k);
		if (bi == static_cast<int>(i))
			out.push_back({static_cast<int>(i), bj, score[i][bj]});
	}
	(void)inf;
	return out;
}

} // namespace

TEST(Units, GateSpeedInKmh)
{
	EXPECT_NEAR(px_per_frame_to_kmh(30.0, 0.23, 5.0), 124.2, 0.5);
}

TEST(Gates, DisplacementBoundary)
{
	const Gates g;
	EXPECT_FALSE(admissible(det(10, 10, 0), det(41, 10, 0), g, 5.0));
	EXPECT_TRUE(admissible(det(10, 10, 0), det(40, 10, 0), g, 5.0));
}

TEST(Gates, LowSpeedWaivesDirection)
{
	const Gates g;
	// 0.5 px/frame at 5 frames/s is 2.5 px/s, perpendicular to the car axis
	EXPECT_TRUE(admissible(det(10, 10, 0), det(10, 10.5, 0), g, 5.0));
	// the same motion at 3 px/frame is checked and fails
	EXPECT_FALSE(admissible(det(10, 10, 0), det(10, 13, 0), g, 5.0));
}

TEST(Gates, RotationFoldsModPi)
{
	const Gates g;
	EXPECT_NEAR(degrees(axis_difference(radians(10), radians(170))), 20.0, 1e-9);
	EXPECT_TRUE(admissible(det(10, 10, 10), det(13, 10, 170), g, 5.0));
	EXPECT_FALSE(admissible(det(10, 10, 0), det(13, 10, 40), g, 5.0));
}

TEST(Gates, DirectionAxisChoice)
{
	Gates g;
	// motion along +x, first axis 25 degrees, second 50 degrees
	const auto a = det(0, 0, 25), b = det(10, 0, 50);
	EXPECT_TRUE(admissible(a, b, g, 5.0));
	g.direction_axis = DirectionAxis::second;
	EXPECT_FALSE(admissible(a, b, g, 5.0));
	g.direction_axis = DirectionAxis::mean;
	EXPECT_FALSE(admissible(a, b, g, 5.0));
}

TEST(Gates, RandomPairsMatchDirectArithmetic)
{
	std::mt19937_64 rng(1);
	std::uniform_real_distribution<double> pos(0.0, 60.0), ang(0.0, 180.0);
	const Gates g;
	for (int k = 0; k < 5000; ++k) {
		const auto a = det(pos(rng), pos(rng), ang(rng)), b = det(pos(rng), pos(rng), ang(rng));
		const double dx = b.centre.x - a.centre.x, dy = b.centre.y - a.centre.y;
		const double dist = std::hypot(dx, dy);
		double rot = std::fmod(std::abs(a.orientation - b.orientation), std::numbers::pi);
		rot = std::min(rot, std::numbers::pi - rot);
		double dir = std::fmod(std::abs(std::atan2(dy, dx) - a.orientation), std::numbers::pi);
		dir = std::min(dir, std::numbers::pi - dir);
		const bool expect = dist <= 30.0 && degrees(rot) <= 30.0 && (dist * 5.0 <= 5.0 || degrees(dir) <= 30.0);
		ASSERT_EQ(admissible(a, b, g, 5.0), expect);
	}
}

TEST(Gates, PairsAreRowMajorAndValidated)
{
	const std::vector<Detection> a{det(0, 0, 0), det(100, 0, 0)}, b{det(5, 0, 0), det(104, 0, 0), det(2, 0, 0)};
	const auto pairs = gate_pairs(a, b, Gates{}, 5.0);
	EXPECT_EQ(pairs, (std::vector<std::pair<int, int>>{{0, 0}, {0, 2}, {1, 1}}));
	Gates bad;
	bad.max_rotation_deg = 0.0;
	EXPECT_THROW(gate_pairs(a, b, bad, 5.0), Error);
}

TEST(Sad, IdenticalIsZero)
{
	std::mt19937_64 rng(2);
	std::uniform_real_distribution<double> u(0.0, 1.0);
	RasterImage img(40, 40);
	for (double& v : img.pixels())
		v = u(rng);
	const auto d = det(20.3, 19.6, 33);
	EXPECT_EQ(sad_score(img, img, d, d), 0.0);
}

TEST(Sad, ConstantDifference)
{
	const RasterImage a(40, 40, 0.2), b(40, 40, 0.5);
	EXPECT_NEAR(sad_score(a, b, det(20, 20, 10), det(21, 19, 80)), 38.4, 1e-9);
}

TEST(Sad, MatchesResamplingOracle)
{
	std::mt19937_64 rng(3);
	std::uniform_real_distribution<double> u(0.0, 1.0), p(15.0, 45.0), ang(0.0, 180.0);
	RasterImage ia(60, 60), ib(60, 60);
	for (double& v : ia.pixels())
		v = u(rng);
	for (double& v : ib.pixels())
		v = u(rng);
	for (int k = 0; k < 100; ++k) {
		const auto a = det(p(rng), p(rng), ang(rng)), b = det(p(rng), p(rng), ang(rng));
		ASSERT_NEAR(sad_score(ia, ib, a, b), oracle_sad(ia, ib, a, b), 1e-9);
	}
}

TEST(Sad, FlipInvariantAndOutOfBounds)
{
	std::mt19937_64 rng(4);
	std::uniform_real_distribution<double> u(0.0, 1.0);
	RasterImage img(50, 50);
	for (double& v : img.pixels())
		v = u(rng);
	const auto a = det(25, 25, 30), b = det(25, 25, 210);
	EXPECT_NEAR(sad_score(img, img, a, b), 0.0, 1e-12);
	EXPECT_TRUE(std::isinf(sad_score(img, img, det(3, 25, 0), a)));
}

TEST(SymmetricMatch, SinglePair)
{
	const std::vector<ScoredPair> c{{0, 0, 4.0}};
	EXPECT_EQ(symmetric_match(1, 1, c), (std::vector<Match>{{0, 0, 4.0}}));
}

TEST(SymmetricMatch, AsymmetricDiscarded)
{
	// 0 prefers 0, but 0 prefers 1 in return; 1 and 0 agree
	const std::vector<ScoredPair> c{{0, 0, 2.0}, {1, 0, 1.0}, {0, 1, 5.0}};
	EXPECT_EQ(symmetric_match(2, 2, c), (std::vector<Match>{{1, 0, 1.0}}));
}

TEST(SymmetricMatch, TiesGoToLowestIndex)
{
	const std::vector<ScoredPair> c{{1, 0, 1.0}, {0, 0, 1.0}};
	EXPECT_EQ(symmetric_match(2, 1, c), (std::vector<Match>{{0, 0, 1.0}}));
	const std::vector<ScoredPair> nan{{0, 0, std::numeric_limits<double>::infinity()}};
	EXPECT_TRUE(symmetric_match(1, 1, nan).empty());
	const std::vector<ScoredPair> bad{{0, 3, 1.0}};
	EXPECT_THROW(symmetric_match(1, 1, bad), Error);
}

TEST(SymmetricMatch, RandomMatricesMatchBruteForce)
{
	std::mt19937_64 rng(5);
	std::uniform_real_distribution<double> s(0.0, 100.0), keep(0.0, 1.0);
	for (int trial = 0; trial < 200; ++trial) {
		const std::size_t na = 1 + rng() % 20, nb = 1 + rng() % 20;
		std::vector<std::vector<double>> score(na, std::vector<double>(nb, std::numeric_limits<double>::infinity()));
		std::vector<ScoredPair> c, swapped;
		for (std::size_t i = 0; i < na; ++i)
			for (std::size_t j = 0; j < nb; ++j)
				if (keep(rng) < 0.4) {
					score[i][j] = std::round(s(rng));
					c.push_back({static_cast<int>(i), static_cast<int>(j), score[i][j]});
					swapped.push_back({static_cast<int>(j), static_cast<int>(i), score[i][j]});
				}
		const auto m = symmetric_match(na, nb, c);
		ASSERT_EQ(m, brute_mutual(na, nb, score));

		// swapping frame roles gives the transposed matching
		auto back = symmetric_match(nb, na, swapped);
		std::vector<Match> flipped;
		for (const auto& x : back)
			flipped.push_back({x.to, x.from, x.sad});
		std::sort(flipped.begin(), flipped.end(), [](const Match& a, const Match& b) { return a.from < b.from; });
		ASSERT_EQ(flipped, m);
	}
}

TEST(Chain, AccelerationBoundary)
{
	const Gates g;
	auto chain = [&](Point2 v1, Point2 v2) {
		const std::vector<Detection> f0{det(50, 50, 0)}, f1{det(50 + v1.x, 50 + v1.y, 0)},
		    f2{det(50 + v1.x + v2.x, 50 + v1.y + v2.y, 0)};
		const std::vector<Match> m01{{0, 0, 0.0}}, m12{{0, 0, 0.0}};
		return chain_tracklets(m01, m12, f0, f1, f2, g, 7);
	};
	const auto kept = chain({3, 0}, {3, 0});
	ASSERT_EQ(kept.size(), 1u);
	EXPECT_EQ(kept[0].frame, 7);
	EXPECT_EQ(kept[0].acceleration(), 0.0);
	EXPECT_TRUE(chain({0, 0}, {4.1, 0}).empty());
	EXPECT_EQ(chain({0, 0}, {4.0, 0}).size(), 1u);
}

TEST(Chain, JoinsOnSharedDetection)
{
	const std::vector<Detection> f0{det(10, 10, 0), det(60, 10, 0)}, f1{det(63, 10, 0), det(13, 10, 0)},
	    f2{det(16, 10, 0), det(66, 10, 0), det(90, 90, 0)};
	const std::vector<Match> m01{{0, 1, 0.0}, {1, 0, 0.0}}, m12{{1, 0, 0.0}};
	const auto t = chain_tracklets(m01, m12, f0, f1, f2, Gates{});
	ASSERT_EQ(t.size(), 1u);
	EXPECT_EQ(t[0].centres[2], (Point2{16, 10}));
	EXPECT_LE(t.size(), std::min(m01.size(), m12.size()));
	const std::vector<Match> bad{{0, 5, 0.0}};
	EXPECT_THROW(chain_tracklets(m01, bad, f0, f1, f2, Gates{}), Error);
}

TEST(Chain, ConstantVelocitySceneYieldsEveryTriple)
{
	SceneSpec scene;
	scene.width = 256;
	scene.height = 96;
	scene.frames = 40;
	scene.jitter = 0.0;
	scene.intensity_noise = 0.0;
	scene.seed = 3;
	scene.lanes.push_back({{{4.0, 48.0}, {250.0, 48.0}}, 3.0, 12.0, 0.2, 1});
	const auto sim = generate(scene);

	std::vector<std::vector<Detection>> dets(sim.frames.size());
	std::vector<std::map<int, int>> index(sim.frames.size());
	for (std::size_t f = 0; f < sim.frames.size(); ++f)
		for (const auto& r : sim.truth.frames[f]) {
			index[f][r.id] = static_cast<int>(dets[f].size());
			Detection d;
			d.frame = static_cast<int>(f);
			d.centre = r.centre;
			d.orientation = std::fmod(r.heading, std::numbers::pi);
			dets[f].push_back(d);
		}
	const auto tracklets = track_sequence(sim.frames, dets, Gates{}, 5.0);

	std::size_t expected = 0;
	for (std::size_t f = 0; f + 2 < sim.frames.size(); ++f)
		for (const auto& r : sim.truth.frames[f]) {
			if (!index[f + 1].count(r.id) || !index[f + 2].count(r.id))
				continue;
			const Point2 c2 = dets[f + 2][index[f + 2][r.id]].centre;
			if (r.centre.x < 10 || c2.x > scene.width - 11)
				continue;
			++expected;
			const bool found = std::any_of(tracklets.begin(), tracklets.end(), [&](const Tracklet& t) {
				return t.frame == static_cast<int>(f) && t.centres[0] == r.centre && t.centres[2] == c2;
			});
			EXPECT_TRUE(found) << "frame " << f << " id " << r.id;
		}
	EXPECT_GT(expected, 20u);
	for (const auto& t : tracklets) {
		EXPECT_NEAR(t.v1().x, 3.0, 1e-9);
		EXPECT_NEAR(t.v2().x, 3.0, 1e-9);
	}
}

TEST(Tracklets, CsvRoundTrip)
{
	const std::vector<Tracklet> t{{4, {Point2{1.5, 2.0}, Point2{4.5, 2.25}, Point2{7.5, 2.5}}}};
	std::stringstream s;
	write_tracklets(s, t);
	const auto back = read_tracklets(s);
	ASSERT_EQ(back.size(), 1u);
	EXPECT_EQ(back[0].frame, 4);
	EXPECT_EQ(back[0].centres, t[0].centres);
}
