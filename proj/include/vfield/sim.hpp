#ifndef VFIELD_SIM_HPP
#define VFIELD_SIM_HPP

#include "vfield/parallel.hpp"
#include "vfield/raster.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace vfield {

/// One traffic lane: vehicles enter at the first centreline point and drive to the last.
struct LaneSpec {
	std::vector<Point2> centreline;
	double speed = 3.0;       // px/frame
	double width = 12.0;      // px
	double spawn_rate = 0.05; // vehicles/frame
	int direction = 1;        // -1 drives the centreline backwards
};

struct SceneSpec {
	int width = 512;
	int height = 512;
	int frames = 300;
	double intensity_noise = 0.02; // additive Gaussian sigma
	double jitter = 1.0;           // per-frame global translation sigma, px
	std::uint64_t seed = 1;
	double min_gap = 40.0;           // px between consecutive vehicles of a lane
	double max_acceleration = 1.74;  // px/frame^2 bound on truth trajectories
	double car_length = 16.0;
	double car_width = 8.0;
	double background_mean = 0.35;
	double background_amplitude = 0.05;
	double car_brightness_min = 0.6; // per-vehicle level drawn uniformly from [min, max]
	double car_brightness_max = 0.95;
	std::vector<LaneSpec> lanes;
};

struct TruthRecord {
	int frame = 0;
	int id = 0;
	Point2 centre;         // image position, including the frame's jitter
	double heading = 0.0;  // direction of travel, [0, 2pi)
	Point2 velocity;       // px/frame, world motion to the next frame
};

struct GroundTruth {
	std::vector<std::vector<TruthRecord>> frames;
	std::vector<Point2> jitter; // per-frame image translation
};

struct Simulation {
	std::vector<RasterImage> frames;
	GroundTruth truth;
	std::vector<double> brightness; // per vehicle id
};

/// Arc-length parameterized polyline.
class Polyline {
public:
	Polyline() = default;
	explicit Polyline(std::vector<Point2> pts) : pts_(std::move(pts))
	{
		if (pts_.size() < 2)
			throw Error("a lane needs at least two centreline points");
		cum_.push_back(0.0);
		for (std::size_t i = 1; i < pts_.size(); ++i) {
			const double d = norm(pts_[i] - pts_[i - 1]);
			if (!(d > 0.0))
				throw Error("lane centreline has repeated points");
			cum_.push_back(cum_.back() + d);
		}
	}

	double length() const { return cum_.back(); }
	const std::vector<Point2>& points() const { return pts_; }

	Point2 at(double s) const
	{
		const auto k = segment(s);
		const double t = (s - cum_[k]) / (cum_[k + 1] - cum_[k]);
		return pts_[k] + t * (pts_[k + 1] - pts_[k]);
	}

	/// Unit direction of the segment containing s.
	Point2 tangent(double s) const
	{
		const auto k = segment(s);
		const Point2 d = pts_[k + 1] - pts_[k];
		return (1.0 / norm(d)) * d;
	}

	/// Arc length of the point on the polyline nearest to `p`, with its distance.
	std::pair<double, double> project(Point2 p) const
	{
		double best_s = 0.0, best_d = std::numeric_limits<double>::infinity();
		for (std::size_t k = 0; k + 1 < pts_.size(); ++k) {
			const Point2 d = pts_[k + 1] - pts_[k];
			const double len2 = d.x * d.x + d.y * d.y;
			const Point2 r = p - pts_[k];
			const double t = std::clamp((r.x * d.x + r.y * d.y) / len2, 0.0, 1.0);
			const double dist = norm(p - (pts_[k] + t * d));
			if (dist < best_d) {
				best_d = dist;
				best_s = cum_[k] + t * (cum_[k + 1] - cum_[k]);
			}
		}
		return {best_s, best_d};
	}

private:
	std::size_t segment(double s) const
	{
		const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
		std::size_t k = it == cum_.begin() ? 0 : static_cast<std::size_t>(it - cum_.begin() - 1);
		return std::min(k, pts_.size() - 2);
	}

	std::vector<Point2> pts_;
	std::vector<double> cum_;
};

/// Circular arc from a0 to a1 (degrees, image axes) sampled every `step` px of arc length.
inline std::vector<Point2> arc_polyline(Point2 centre, double radius, double a0_deg, double a1_deg, double step = 4.0)
{
	const double a0 = a0_deg * std::numbers::pi / 180.0, a1 = a1_deg * std::numbers::pi / 180.0;
	const int n = std::max(1, static_cast<int>(std::ceil(std::abs(a1 - a0) * radius / step)));
	std::vector<Point2> pts;
	for (int i = 0; i <= n; ++i) {
		const double a = a0 + (a1 - a0) * i / n;
		pts.push_back({centre.x + radius * std::cos(a), centre.y + radius * std::sin(a)});
	}
	return pts;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x)
{
	x += 0x9e3779b97f4a7c15ull;
	x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
	x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
	return x ^ (x >> 31);
}

inline double lattice_value(std::uint64_t seed, long ix, long iy)
{
	const auto h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(ix) * 0x100000001b3ull +
	                                            static_cast<std::uint64_t>(iy)));
	return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Smoothly interpolated lattice noise in [0, 1].
inline double value_noise(std::uint64_t seed, double x, double y)
{
	const double fx = std::floor(x), fy = std::floor(y);
	const long ix = static_cast<long>(fx), iy = static_cast<long>(fy);
	auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
	const double tx = smooth(x - fx), ty = smooth(y - fy);
	const double a = lattice_value(seed, ix, iy), b = lattice_value(seed, ix + 1, iy);
	const double c = lattice_value(seed, ix, iy + 1), d = lattice_value(seed, ix + 1, iy + 1);
	return (1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * d);
}

} // namespace detail

/// Checks image bounds, speed and width limits, and that corners respect the acceleration bound.
inline void validate_scene(const SceneSpec& scene)
{
	if (scene.width <= 0 || scene.height <= 0 || scene.frames < 0)
		throw Error("scene dimensions and frame count must be positive");
	if (!(scene.intensity_noise >= 0.0) || !(scene.jitter >= 0.0) || !(scene.min_gap > 0.0) ||
	    !(scene.max_acceleration > 0.0) || !(scene.car_length > 0.0) || !(scene.car_width > 0.0))
		throw Error("scene noise, gap, acceleration and car size must be non-negative / positive");
	if (!(scene.car_brightness_min >= 0.0 && scene.car_brightness_min <= scene.car_brightness_max &&
	      scene.car_brightness_max <= 1.0))
		throw Error("car brightness range must satisfy 0 <= min <= max <= 1");
	for (const auto& lane : scene.lanes) {
		if (!(lane.speed > 0.0 && lane.speed <= 30.0))
			throw Error("lane speed must lie in (0, 30] px/frame");
		if (!(lane.width >= scene.car_width))
			throw Error("lane narrower than a car");
		if (!(lane.spawn_rate >= 0.0 && lane.spawn_rate <= 1.0))
			throw Error("lane spawn rate must lie in [0, 1]");
		if (lane.direction != 1 && lane.direction != -1)
			throw Error("lane direction must be 1 or -1");
		const Polyline line(lane.centreline);
		for (Point2 p : lane.centreline)
			if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= scene.width - 1 && p.y <= scene.height - 1))
				throw Error("lane centreline leaves the image");
		const auto& pts = line.points();
		for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
			const Point2 a = pts[i] - pts[i - 1], b = pts[i + 1] - pts[i];
			const double turn = std::abs(std::atan2(a.x * b.y - a.y * b.x, a.x * b.x + a.y * b.y));
			if (2.0 * lane.speed * std::sin(0.5 * turn) > scene.max_acceleration)
				throw Error("lane corner exceeds the acceleration bound at this speed");
		}
	}
}

namespace detail {

struct Vehicle {
	int id;
	std::size_t lane;
	double s;
};

inline RasterImage render_frame(const SceneSpec& scene, std::span<const TruthRecord> cars,
                                std::span<const double> brightness, Point2 jitter, int frame)
{
	RasterImage img(scene.width, scene.height);
	const std::uint64_t texture = splitmix64(scene.seed ^ 0x7e57u);
	for (int y = 0; y < scene.height; ++y)
		for (int x = 0; x < scene.width; ++x) {
			const double wx = x - jitter.x, wy = y - jitter.y;
			const double n = 0.65 * value_noise(texture, wx / 16.0, wy / 16.0) +
			                 0.35 * value_noise(texture + 1, wx / 5.0, wy / 5.0);
			img(x, y) = scene.background_mean + scene.background_amplitude * 2.0 * (n - 0.5);
		}

	constexpr int sub = 4;
	const double half_l = 0.5 * scene.car_length, half_w = 0.5 * scene.car_width;
	const double reach = std::hypot(half_l, half_w) + 1.0;
	for (const auto& car : cars) {
		const double ux = std::cos(car.heading), uy = std::sin(car.heading);
		const int xa = std::max(0, static_cast<int>(std::floor(car.centre.x - reach)));
		const int xb = std::min(scene.width - 1, static_cast<int>(std::ceil(car.centre.x + reach)));
		const int ya = std::max(0, static_cast<int>(std::floor(car.centre.y - reach)));
		const int yb = std::min(scene.height - 1, static_cast<int>(std::ceil(car.centre.y + reach)));
		const double level = brightness[static_cast<std::size_t>(car.id)];
		for (int y = ya; y <= yb; ++y)
			for (int x = xa; x <= xb; ++x) {
				int inside = 0;
				for (int j = 0; j < sub; ++j)
					for (int i = 0; i < sub; ++i) {
						const double dx = x + (i + 0.5) / sub - 0.5 - car.centre.x;
						const double dy = y + (j + 0.5) / sub - 0.5 - car.centre.y;
						const double along = dx * ux + dy * uy, across = -dx * uy + dy * ux;
						inside += std::abs(along) < half_l && std::abs(across) < half_w;
					}
				if (inside) {
					const double cover = static_cast<double>(inside) / (sub * sub);
					img(x, y) = cover * level + (1.0 - cover) * img(x, y);
				}
			}
	}

	if (scene.intensity_noise > 0.0) {
		std::mt19937_64 rng(splitmix64(scene.seed ^ splitmix64(0x4015eull + static_cast<std::uint64_t>(frame))));
		std::normal_distribution<double> noise(0.0, scene.intensity_noise);
		for (double& v : img.pixels())
			v += noise(rng);
	}
	for (double& v : img.pixels())
		v = std::clamp(v, 0.0, 1.0);
	return img;
}

} // namespace detail

/**
 * Simulates the scene: vehicles spawn at lane starts (respecting `min_gap`),
 * drive at the lane speed, and are drawn as oriented bright rectangles with a
 * per-vehicle brightness over a value-noise background. Each frame is
 * translated by Gaussian jitter and has Gaussian intensity noise added.
 * Lanes are pre-filled by running the traffic for one lane traversal before
 * frame 0. Fully deterministic for a given seed.
 */
inline Simulation generate(const SceneSpec& scene)
{
	validate_scene(scene);
	std::vector<Polyline> lines;
	for (const auto& lane : scene.lanes) {
		auto pts = lane.centreline;
		if (lane.direction < 0)
			std::reverse(pts.begin(), pts.end());
		lines.emplace_back(std::move(pts));
	}

	std::mt19937_64 traffic(detail::splitmix64(scene.seed ^ 0x7aff1cull));
	std::mt19937_64 shake(detail::splitmix64(scene.seed ^ 0x5ba4eull));
	std::uniform_real_distribution<double> unit(0.0, 1.0);
	std::uniform_real_distribution<double> shade(scene.car_brightness_min, scene.car_brightness_max);
	std::normal_distribution<double> jitter(0.0, 1.0);

	int preroll = 0;
	for (std::size_t l = 0; l < lines.size(); ++l)
		preroll = std::max(preroll, static_cast<int>(std::ceil(lines[l].length() / scene.lanes[l].speed)));

	Simulation sim;
	std::vector<detail::Vehicle> active;
	std::vector<double> last_spawn_s(lines.size());
	for (int t = -preroll; t < scene.frames; ++t) {
		for (std::size_t l = 0; l < lines.size(); ++l) {
			const bool roll = unit(traffic) < scene.lanes[l].spawn_rate;
			double nearest = std::numeric_limits<double>::infinity();
			for (const auto& v : active)
				if (v.lane == l)
					nearest = std::min(nearest, v.s);
			if (roll && nearest >= scene.min_gap) {
				active.push_back({static_cast<int>(sim.brightness.size()), l, 0.0});
				sim.brightness.push_back(shade(traffic));
			}
		}

		if (t >= 0) {
			const Point2 offset{scene.jitter * jitter(shake), scene.jitter * jitter(shake)};
			sim.truth.jitter.push_back(offset);
			std::vector<TruthRecord> records;
			for (const auto& v : active) {
				const auto& line = lines[v.lane];
				const double speed = scene.lanes[v.lane].speed;
				const Point2 pos = line.at(v.s);
				const Point2 dir = line.tangent(v.s);
				const Point2 vel = v.s + speed <= line.length() ? line.at(v.s + speed) - pos : speed * dir;
				TruthRecord r{t, v.id, pos + offset, std::atan2(dir.y, dir.x), vel};
				if (r.heading < 0.0)
					r.heading += 2.0 * std::numbers::pi;
				if (r.centre.x >= 0.0 && r.centre.y >= 0.0 && r.centre.x <= scene.width - 1 &&
				    r.centre.y <= scene.height - 1)
					records.push_back(r);
			}
			sim.truth.frames.push_back(std::move(records));
		}

		for (auto& v : active)
			v.s += scene.lanes[v.lane].speed;
		std::erase_if(active, [&](const detail::Vehicle& v) { return v.s > lines[v.lane].length(); });
	}

	sim.frames.resize(static_cast<std::size_t>(scene.frames));
	parallel_for(sim.frames.size(), [&](std::size_t f) {
		sim.frames[f] = detail::render_frame(scene, sim.truth.frames[f], sim.brightness, sim.truth.jitter[f],
		                                     static_cast<int>(f));
	});
	return sim;
}

/**
 * Stationary cars at uniformly random positions and headings, `cars` per
 * frame, at least `spacing` px apart and `margin` px inside the image. The
 * scene's lanes are ignored and frames have no jitter; each frame uses its
 * own background texture. Deterministic for a given scene seed.
 */
inline Simulation scatter_cars(const SceneSpec& scene, int cars, double spacing = 24.0, double margin = 20.0)
{
	SceneSpec base = scene;
	base.lanes.clear();
	validate_scene(base);
	if (cars < 0 || !(spacing >= 0.0) || !(margin >= 0.0) || 2.0 * margin > std::min(scene.width, scene.height) - 1)
		throw Error("invalid scattered-car layout");
	std::mt19937_64 rng(detail::splitmix64(scene.seed ^ 0x5ca77e4ull));
	std::uniform_real_distribution<double> unit(0.0, 1.0);
	std::uniform_real_distribution<double> shade(scene.car_brightness_min, scene.car_brightness_max);

	Simulation sim;
	for (int f = 0; f < scene.frames; ++f) {
		std::vector<TruthRecord> records;
		for (int attempt = 0; static_cast<int>(records.size()) < cars && attempt < 1000 * (cars + 1); ++attempt) {
			const Point2 p{margin + unit(rng) * (scene.width - 1 - 2 * margin),
			               margin + unit(rng) * (scene.height - 1 - 2 * margin)};
			const double heading = unit(rng) * 2.0 * std::numbers::pi;
			if (std::any_of(records.begin(), records.end(), [&](const TruthRecord& r) { return norm(r.centre - p) < spacing; }))
				continue;
			records.push_back({f, static_cast<int>(sim.brightness.size()), p, heading, {}});
			sim.brightness.push_back(shade(rng));
		}
		sim.truth.frames.push_back(std::move(records));
		sim.truth.jitter.push_back({});
	}
	sim.frames.resize(static_cast<std::size_t>(scene.frames));
	parallel_for(sim.frames.size(), [&](std::size_t f) {
		SceneSpec frame_scene = base;
		frame_scene.seed = detail::splitmix64(scene.seed + f);
		sim.frames[f] = detail::render_frame(frame_scene, sim.truth.frames[f], sim.brightness, {},
		                                     static_cast<int>(f));
	});
	return sim;
}

/// Marked car centres (image coordinates) of one frame.
inline std::vector<Point2> truth_labels(const GroundTruth& truth, int frame)
{
	if (frame < 0 || static_cast<std::size_t>(frame) >= truth.frames.size())
		throw Error("frame " + std::to_string(frame) + " outside the ground truth");
	std::vector<Point2> out;
	for (const auto& r : truth.frames[static_cast<std::size_t>(frame)])
		out.push_back(r.centre);
	return out;
}

// Truth file: CSV "frame,id,x,y,theta,vx,vy"; x, y in image coordinates.

inline void write_truth(std::ostream& out, const GroundTruth& truth)
{
	out << "frame,id,x,y,theta,vx,vy\n" << std::setprecision(17);
	for (const auto& frame : truth.frames)
		for (const auto& r : frame)
			out << r.frame << ',' << r.id << ',' << r.centre.x << ',' << r.centre.y << ',' << r.heading << ','
			    << r.velocity.x << ',' << r.velocity.y << '\n';
}

inline GroundTruth read_truth(std::istream& in, int frame_count = -1)
{
	GroundTruth truth;
	if (frame_count > 0)
		truth.frames.resize(static_cast<std::size_t>(frame_count));
	std::string line;
	int lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (line.empty() || (lineno == 1 && line.rfind("frame", 0) == 0))
			continue;
		std::replace(line.begin(), line.end(), ',', ' ');
		std::istringstream ls(line);
		TruthRecord r;
		if (!(ls >> r.frame >> r.id >> r.centre.x >> r.centre.y >> r.heading >> r.velocity.x >> r.velocity.y) ||
		    r.frame < 0)
			throw Error("malformed truth line " + std::to_string(lineno));
		if (static_cast<std::size_t>(r.frame) >= truth.frames.size())
			truth.frames.resize(static_cast<std::size_t>(r.frame) + 1);
		truth.frames[static_cast<std::size_t>(r.frame)].push_back(r);
	}
	return truth;
}

namespace detail {

inline std::string trim(const std::string& s)
{
	const auto a = s.find_first_not_of(" \t\r");
	if (a == std::string::npos)
		return {};
	const auto b = s.find_last_not_of(" \t\r");
	return s.substr(a, b - a + 1);
}

// "key = value" / "key value" lines with '#' comments, in file order.
inline std::vector<std::pair<std::string, std::string>> read_key_values(std::istream& in)
{
	std::vector<std::pair<std::string, std::string>> out;
	std::string line;
	int lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (const auto hash = line.find('#'); hash != std::string::npos)
			line.erase(hash);
		line = trim(line);
		if (line.empty())
			continue;
		auto split = line.find('=');
		if (split == std::string::npos)
			split = line.find_first_of(" \t");
		if (split == std::string::npos)
			throw Error("line " + std::to_string(lineno) + ": expected 'key = value'");
		out.emplace_back(trim(line.substr(0, split)), trim(line.substr(split + 1)));
	}
	return out;
}

template <class T>
T parse_value(const std::string& key, const std::string& text)
{
	std::istringstream ls(text);
	T v{};
	std::string rest;
	if (!(ls >> v) || (ls >> rest))
		throw Error("invalid value for '" + key + "': " + text);
	return v;
}

} // namespace detail

// Lane file: one lane per line,
//   speed width spawn_rate direction x0,y0 x1,y1 ...

inline std::vector<LaneSpec> read_lanes(std::istream& in)
{
	std::vector<LaneSpec> lanes;
	std::string line;
	int lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (const auto hash = line.find('#'); hash != std::string::npos)
			line.erase(hash);
		if (detail::trim(line).empty())
			continue;
		std::istringstream ls(line);
		LaneSpec lane;
		if (!(ls >> lane.speed >> lane.width >> lane.spawn_rate >> lane.direction))
			throw Error("lane line " + std::to_string(lineno) + ": expected speed width spawn_rate direction");
		std::string tok;
		while (ls >> tok) {
			std::replace(tok.begin(), tok.end(), ',', ' ');
			std::istringstream ps(tok);
			Point2 p;
			if (!(ps >> p.x >> p.y))
				throw Error("lane line " + std::to_string(lineno) + ": malformed point");
			lane.centreline.push_back(p);
		}
		if (lane.centreline.size() < 2)
			throw Error("lane line " + std::to_string(lineno) + ": needs at least two points");
		lanes.push_back(std::move(lane));
	}
	return lanes;
}

inline void write_lanes(std::ostream& out, std::span<const LaneSpec> lanes)
{
	out << "# speed width spawn_rate direction x0,y0 x1,y1 ...\n" << std::setprecision(10);
	for (const auto& l : lanes) {
		out << l.speed << ' ' << l.width << ' ' << l.spawn_rate << ' ' << l.direction;
		for (Point2 p : l.centreline)
			out << ' ' << p.x << ',' << p.y;
		out << '\n';
	}
}

/**
 * Scene file: "key = value" lines. `lanes` names the lane file, relative to
 * the scene file's directory. Unknown keys are rejected.
 */
inline SceneSpec read_scene(const std::filesystem::path& path)
{
	std::ifstream in(path);
	if (!in)
		throw Error("cannot open scene file " + path.string());
	SceneSpec scene;
	bool have_lanes = false;
	for (const auto& [key, value] : detail::read_key_values(in)) {
		if (key == "width")
			scene.width = detail::parse_value<int>(key, value);
		else if (key == "height")
			scene.height = detail::parse_value<int>(key, value);
		else if (key == "frames")
			scene.frames = detail::parse_value<int>(key, value);
		else if (key == "intensity_noise")
			scene.intensity_noise = detail::parse_value<double>(key, value);
		else if (key == "jitter")
			scene.jitter = detail::parse_value<double>(key, value);
		else if (key == "seed")
			scene.seed = detail::parse_value<std::uint64_t>(key, value);
		else if (key == "min_gap")
			scene.min_gap = detail::parse_value<double>(key, value);
		else if (key == "max_acceleration")
			scene.max_acceleration = detail::parse_value<double>(key, value);
		else if (key == "car_length")
			scene.car_length = detail::parse_value<double>(key, value);
		else if (key == "car_width")
			scene.car_width = detail::parse_value<double>(key, value);
		else if (key == "background_mean")
			scene.background_mean = detail::parse_value<double>(key, value);
		else if (key == "background_amplitude")
			scene.background_amplitude = detail::parse_value<double>(key, value);
		else if (key == "car_brightness_min")
			scene.car_brightness_min = detail::parse_value<double>(key, value);
		else if (key == "car_brightness_max")
			scene.car_brightness_max = detail::parse_value<double>(key, value);
		else if (key == "lanes") {
			const auto lane_path = path.parent_path() / value;
			std::ifstream lf(lane_path);
			if (!lf)
				throw Error("cannot open lane file " + lane_path.string());
			scene.lanes = read_lanes(lf);
			have_lanes = true;
		} else
			throw Error("unknown scene key '" + key + "'");
	}
	if (!have_lanes)
		scene.lanes.clear();
	validate_scene(scene);
	return scene;
}

/**
 * The bundled demo: two opposing straight lanes at 3 and 5 px/frame and a
 * curved lane at 4 px/frame on a 512 x 512 image, 300 frames, intensity
 * noise 0.02 and 1 px jitter.
 */
inline SceneSpec demo_scene(std::uint64_t seed = 1)
{
	SceneSpec s;
	s.seed = seed;
	s.lanes.push_back({{{12.0, 150.0}, {500.0, 150.0}}, 3.0, 12.0, 0.08, 1});
	s.lanes.push_back({{{12.0, 200.0}, {500.0, 200.0}}, 5.0, 12.0, 0.1, -1});
	s.lanes.push_back({arc_polyline({256.0, 560.0}, 230.0, 200.0, 340.0), 4.0, 12.0, 0.08, 1});
	return s;
}

} // namespace vfield

#endif
