#include "vfield/field.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace vfield;

namespace {

FieldGeometry geometry(int w = 64, int h = 48) { return {w, h, 30.0, 1.0}; }

std::uint32_t bin_of(const FieldGeometry& g, int vx, int vy)
{
	return static_cast<std::uint32_t>((vy + g.half_bins()) * g.bins_per_axis() + vx + g.half_bins());
}

std::vector<Tracklet> random_tracklets(std::size_t n, int w, int h, std::uint64_t seed)
{
	std::mt19937_64 rng(seed);
	std::uniform_real_distribution<double> x(35.0, w - 36.0), y(35.0, h - 36.0), v(-12.0, 12.0), a(-2.0, 2.0);
	std::vector<Tracklet> out;
	for (std::size_t i = 0; i < n; ++i) {
		const Point2 p0{x(rng), y(rng)}, v1{v(rng), v(rng)}, v2{v1.x + a(rng), v1.y + a(rng)};
		out.push_back({static_cast<int>(i % 50), {p0, p0 + v1, p0 + v1 + v2}});
	}
	return out;
}

} // namespace

TEST(Geometry, DefaultBinning)
{
	const auto g = geometry();
	EXPECT_EQ(g.bins_per_axis(), 61);
	EXPECT_EQ(g.bin_velocity(30, 30), (Point2{0, 0}));
	EXPECT_EQ(g.bin_velocity(0, 60), (Point2{-30, 30}));
	EXPECT_THROW(VelocityField({0, 5, 30.0, 1.0}), Error);
	EXPECT_THROW(VelocityField({5, 5, 30.0, 0.0}), Error);
}

TEST(Deposit, StationaryTracklet)
{
	VelocityField f(geometry());
	const Point2 p{20.2, 30.7};
	f.deposit({0, {p, p, p}}, 1.0);
	EXPECT_EQ(f.histograms().size(), 1u);
	EXPECT_NEAR(f.mass_at({20, 31}), 2.0, 1e-12);
	const auto m = f.mode({20, 31});
	ASSERT_TRUE(m);
	EXPECT_EQ(m->bin_x, 30);
	EXPECT_EQ(m->bin_y, 30);
	EXPECT_EQ(m->speed, 0.0);
	EXPECT_TRUE(std::isnan(m->direction));
}

TEST(Deposit, DeltaBlobOnSegmentPixels)
{
	const auto g = geometry();
	VelocityField f(g);
	f.deposit_segment({10, 10}, {13, 10}, 0.0);
	for (int x = 10; x <= 13; ++x) {
		const auto* h = f.histogram({x, 10});
		ASSERT_NE(h, nullptr);
		ASSERT_EQ(h->size(), 1u);
		EXPECT_EQ(h->at(bin_of(g, 3, 0)), 1.0);
	}
	EXPECT_EQ(f.histograms().size(), 4u);

	VelocityField five(g);
	five.deposit_segment({20, 20}, {24, 20}, 0.0);
	EXPECT_EQ(five.histograms().size(), 5u);
	EXPECT_NEAR(five.total_mass(), 5.0, 1e-12);
}

TEST(Deposit, BlobKeepsSubBinCentreAndUnitMass)
{
	const auto g = geometry();
	VelocityField f(g);
	const auto w = f.blob({2.4, -1.5}, 1.0);
	double total = 0.0, mx = 0.0, my = 0.0;
	for (const auto& [bin, m] : w) {
		total += m;
		const auto v = g.bin_velocity(static_cast<int>(bin) % 61, static_cast<int>(bin) / 61);
		mx += m * v.x;
		my += m * v.y;
	}
	EXPECT_NEAR(total, 1.0, 1e-12);
	EXPECT_NEAR(mx, 2.4, 0.05);
	EXPECT_NEAR(my, -1.5, 0.05);

	// clipped at the range edge, still unit mass
	double edge = 0.0;
	for (const auto& [bin, m] : f.blob({29.8, 0.0}, 1.0))
		edge += m;
	EXPECT_NEAR(edge, 1.0, 1e-12);
	EXPECT_THROW(f.blob({30.5, 0.0}, 1.0), Error);
}

TEST(Deposit, MassEqualsSegmentCoverage)
{
	const auto g = geometry(120, 100);
	VelocityField f(g);
	const auto tracklets = random_tracklets(300, 120, 100, 5);
	deposit_all(f, tracklets, 1.0);
	std::map<std::pair<int, int>, int> coverage;
	std::size_t segment_pixels = 0;
	for (const auto& t : tracklets)
		for (int s = 0; s < 2; ++s)
			for (Pixel p : rasterize_segment(t.centres[s], t.centres[s + 1])) {
				++coverage[{p.x, p.y}];
				++segment_pixels;
			}
	EXPECT_EQ(f.histograms().size(), coverage.size());
	for (const auto& [p, n] : coverage)
		ASSERT_NEAR(f.mass_at({p.first, p.second}), n, 1e-6);
	EXPECT_NEAR(f.total_mass(), static_cast<double>(segment_pixels), 1e-6);
}

TEST(Deposit, OutOfRangeLeavesFieldUntouched)
{
	VelocityField f(geometry());
	const Tracklet t{0, {Point2{10, 10}, Point2{12, 10}, Point2{44, 10}}};
	EXPECT_THROW(f.deposit(t, 1.0), Error);
	EXPECT_TRUE(f.histograms().empty());
	const Tracklet outside{0, {Point2{62, 10}, Point2{66, 10}, Point2{70, 10}}};
	EXPECT_THROW(f.deposit(outside, 1.0), Error);
	EXPECT_TRUE(f.histograms().empty());
}

TEST(Mode, SingleDeposit)
{
	VelocityField f(geometry());
	f.deposit_segment({10, 10}, {13, 14}, 1.0);
	const auto m = f.mode({10, 10});
	ASSERT_TRUE(m);
	EXPECT_NEAR(m->speed, 5.0, 1e-12);
	EXPECT_NEAR(m->direction, std::atan2(4.0, 3.0), 1e-12);
	EXPECT_FALSE(f.mode({0, 0}));
}

TEST(Mode, MajorityAndTies)
{
	const auto g = geometry();
	VelocityField f(g);
	f.add({5, 5}, bin_of(g, 3, 0), 2.0);
	f.add({5, 5}, bin_of(g, -3, 0), 1.0);
	EXPECT_EQ(f.mode({5, 5})->velocity, (Point2{3, 0}));

	f.add({6, 5}, bin_of(g, 2, 1), 1.0);
	f.add({6, 5}, bin_of(g, 4, 0), 1.0);
	// equal mass: lowest (vy, vx) bin index wins
	EXPECT_EQ(f.mode({6, 5})->velocity, (Point2{4, 0}));
	EXPECT_NEAR(f.mode({6, 5})->direction, 0.0, 1e-12);
	f.add({7, 5}, bin_of(g, 0, -1), 1.0);
	EXPECT_NEAR(f.mode({7, 5})->direction, 1.5 * std::numbers::pi, 1e-12);
}

TEST(Mode, MatchesScanAndIsScaleInvariant)
{
	const auto g = geometry();
	std::mt19937_64 rng(7);
	std::uniform_int_distribution<std::uint32_t> bin(0, 61 * 61 - 1);
	std::uniform_real_distribution<double> mass(0.0, 10.0);
	for (int trial = 0; trial < 100; ++trial) {
		VelocityField f(g), scaled(g);
		std::vector<double> dense(61 * 61, 0.0);
		for (int k = 0; k < 40; ++k) {
			const auto b = bin(rng);
			const double m = std::round(mass(rng));
			f.add({1, 1}, b, m);
			scaled.add({1, 1}, b, 3.7 * m);
			dense[b] += m;
		}
		std::size_t best = 0;
		for (std::size_t b = 1; b < dense.size(); ++b)
			if (dense[b] > dense[best])
				best = b;
		const auto m = f.mode({1, 1});
		if (dense[best] == 0.0) {
			EXPECT_FALSE(m);
			continue;
		}
		ASSERT_TRUE(m);
		EXPECT_EQ(m->bin_y * 61 + m->bin_x, static_cast<int>(best));
		EXPECT_EQ(scaled.mode({1, 1})->bin_x, m->bin_x);
		EXPECT_EQ(scaled.mode({1, 1})->bin_y, m->bin_y);
	}
}

TEST(Render, EmptyFieldShowsBase)
{
	RasterImage base(16, 12);
	for (int i = 0; i < 192; ++i)
		base.pixels()[i] = (i % 17) / 16.0;
	const VelocityField f({16, 12, 30.0, 1.0});
	const auto maps = render_maps(f, base);
	EXPECT_EQ(maps.speed_grey, base);
	EXPECT_EQ(maps.direction_grey, base);
	EXPECT_EQ(maps.speed_overlay, to_rgb(base));
	EXPECT_EQ(maps.direction_overlay, to_rgb(base));
	EXPECT_THROW(render_maps(f, RasterImage(15, 12)), Error);
}

TEST(Render, FullCoverageAtAlphaOneHidesBase)
{
	const FieldGeometry g{8, 4, 30.0, 1.0};
	VelocityField f(g);
	for (int y = 0; y < 4; ++y)
		for (int x = 0; x < 8; ++x)
			f.add({x, y}, bin_of(g, x - 3, y - 1), 1.0);
	RasterImage base(8, 4, 0.3);
	const auto a = render_maps(f, base, {15.0, 1.0});
	const auto b = render_maps(f, RasterImage(8, 4, 0.9), {15.0, 1.0});
	EXPECT_EQ(a.speed_overlay, b.speed_overlay);
	for (int y = 0; y < 4; ++y)
		for (int x = 0; x < 8; ++x) {
			const double speed = std::hypot(x - 3, y - 1);
			EXPECT_EQ(a.speed_overlay(x, y), speed_colour(speed, 15.0));
			EXPECT_NEAR(a.speed_grey(x, y), speed / 15.0, 1e-12);
			if (speed == 0.0)
				EXPECT_EQ(a.direction_overlay(x, y), to_rgb(base)(x, y));
			else
				EXPECT_EQ(a.direction_overlay(x, y), direction_colour(std::atan2(y - 1.0, x - 3.0)));
		}
}

TEST(Render, LaneRendersAtRampValue)
{
	const FieldGeometry g{80, 20, 30.0, 1.0};
	VelocityField f(g);
	for (int x0 = 2; x0 + 10 < 78; x0 += 2)
		f.deposit({0, {Point2{double(x0), 10}, Point2{x0 + 5.0, 10}, Point2{x0 + 10.0, 10}}}, 1.0);
	const auto maps = render_maps(f, RasterImage(80, 20, 0.5));
	for (int x = 2; x <= 76; ++x) {
		const auto m = f.mode({x, 10});
		ASSERT_TRUE(m);
		EXPECT_EQ(maps.speed_overlay(x, 10), speed_colour(m->speed, 15.0));
		EXPECT_NEAR(m->speed, 5.0, 1e-12);
	}
	EXPECT_EQ(speed_colour(0.0, 15.0), (Rgb{0, 0, 255}));
	EXPECT_EQ(speed_colour(7.5, 15.0), (Rgb{0, 255, 0}));
	EXPECT_EQ(speed_colour(99.0, 15.0), (Rgb{255, 0, 0}));
	EXPECT_EQ(direction_colour(0.0), (Rgb{255, 0, 0}));
	EXPECT_EQ(direction_colour(2.0 * std::numbers::pi / 3.0), (Rgb{0, 255, 0}));
}

TEST(FieldIo, RoundTrip)
{
	VelocityField f(geometry(90, 70));
	deposit_all(f, random_tracklets(50, 90, 70, 9), 1.0);
	std::stringstream s;
	write_field(s, f);
	EXPECT_EQ(s.str().substr(0, 4), "VFF1");
	EXPECT_EQ(read_field(s), f);
	std::stringstream bad("VFF0");
	EXPECT_THROW(read_field(bad), Error);
}

TEST(Merge, PartitionedStreamEqualsSingleStream)
{
	const auto g = geometry(120, 100);
	const auto tracklets = random_tracklets(1000, 120, 100, 11);
	VelocityField single(g);
	deposit_all(single, tracklets, 1.0);

	std::mt19937_64 rng(12);
	std::vector<VelocityField> parts(8, VelocityField(g));
	for (const auto& t : tracklets)
		parts[rng() % 8].deposit(t, 1.0);
	VelocityField merged(g);
	for (const auto& p : parts)
		merged.merge(p);

	ASSERT_EQ(merged.histograms().size(), single.histograms().size());
	for (const auto& [key, h] : single.histograms()) {
		const auto& other = merged.histograms().at(key);
		ASSERT_EQ(other.size(), h.size());
		for (const auto& [bin, mass] : h)
			ASSERT_NEAR(other.at(bin), mass, 1e-9);
	}
	EXPECT_THROW(merged.merge(VelocityField(geometry(10, 10))), Error);
}
