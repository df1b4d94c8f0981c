#ifndef VFIELD_TRACK_HPP
#define VFIELD_TRACK_HPP

#include "vfield/detect.hpp"
#include "vfield/parallel.hpp"

#include <array>
#include <limits>
#include <numbers>

namespace vfield {

/// Which detection's axis the motion-direction gate compares against.
enum class DirectionAxis { first, second, mean };

/// Kinematic admissibility limits for frame-to-frame matches and tracklets.
struct Gates {
	double max_displacement = 30.0;  // px per frame
	double max_rotation_deg = 30.0;  // axis change per frame
	double max_direction_deg = 30.0; // motion vs. car axis
	double low_speed_px_per_s = 5.0; // direction gate waived at or below this speed
	double max_acceleration = 4.0;   // px / frame^2
	DirectionAxis direction_axis = DirectionAxis::first;

	void validate() const
	{
		for (double v : {max_displacement, max_rotation_deg, max_direction_deg, low_speed_px_per_s, max_acceleration})
			if (!(v > 0.0) || !std::isfinite(v))
				throw Error("gate values must be finite and strictly positive");
	}
};

inline double degrees(double radians) { return radians * 180.0 / std::numbers::pi; }
inline double radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

/// Angle between two undirected axes, folded into [0, pi/2].
inline double axis_difference(double a, double b)
{
	double d = std::fmod(std::abs(a - b), std::numbers::pi);
	return d > 0.5 * std::numbers::pi ? std::numbers::pi - d : d;
}

/// Ground speed of an image-space velocity.
inline double px_per_frame_to_kmh(double px_per_frame, double metres_per_px, double frames_per_s)
{
	return px_per_frame * metres_per_px * frames_per_s * 3.6;
}

/// True when moving `a` onto `b` passes the displacement, rotation and direction gates.
inline bool admissible(const Detection& a, const Detection& b, const Gates& gates, double frames_per_s)
{
	const Point2 d = b.centre - a.centre;
	const double dist = norm(d);
	if (!(dist <= gates.max_displacement))
		return false;
	if (degrees(axis_difference(a.orientation, b.orientation)) > gates.max_rotation_deg)
		return false;
	if (dist * frames_per_s > gates.low_speed_px_per_s) {
		double axis = a.orientation;
		if (gates.direction_axis == DirectionAxis::second)
			axis = b.orientation;
		else if (gates.direction_axis == DirectionAxis::mean)
			axis = 0.5 * std::atan2(std::sin(2 * a.orientation) + std::sin(2 * b.orientation),
			                        std::cos(2 * a.orientation) + std::cos(2 * b.orientation));
		if (degrees(axis_difference(std::atan2(d.y, d.x), axis)) > gates.max_direction_deg)
			return false;
	}
	return true;
}

/// Admissible (i, j) pairs between frame n detections `a` and frame n+1 detections `b`, row-major.
inline std::vector<std::pair<int, int>> gate_pairs(std::span<const Detection> a, std::span<const Detection> b,
                                                   const Gates& gates, double frames_per_s)
{
	gates.validate();
	if (!(frames_per_s > 0.0))
		throw Error("frame rate must be positive");
	std::vector<std::pair<int, int>> out;
	for (std::size_t i = 0; i < a.size(); ++i)
		for (std::size_t j = 0; j < b.size(); ++j)
			if (admissible(a[i], b[j], gates, frames_per_s))
				out.emplace_back(static_cast<int>(i), static_cast<int>(j));
	return out;
}

inline constexpr int patch_across = 8;
inline constexpr int patch_along = 16;

/**
 * Bilinear samples of the 8x16 patch centred on `centre`, 16 samples along
 * `axis` and 8 across it, at unit spacing. False if any sample leaves the image.
 */
inline bool sample_patch(const RasterImage& img, Point2 centre, double axis, std::array<double, 128>& out)
{
	const double ux = std::cos(axis), uy = std::sin(axis);
	std::size_t k = 0;
	for (int j = 0; j < patch_across; ++j) {
		const double across = j - 0.5 * (patch_across - 1);
		for (int i = 0; i < patch_along; ++i) {
			const double along = i - 0.5 * (patch_along - 1);
			const double x = centre.x + along * ux - across * uy;
			const double y = centre.y + along * uy + across * ux;
			if (!sample_bilinear(img, x, y, out[k++]))
				return false;
		}
	}
	return true;
}

/**
 * Sum of absolute differences between the oriented patches under two
 * detections. The second patch is tried in both 180-degree alignments and
 * the smaller score kept. Infinity when a patch leaves its image.
 */
inline double sad_score(const RasterImage& img_a, const RasterImage& img_b, const Detection& a, const Detection& b)
{
	constexpr double inf = std::numeric_limits<double>::infinity();
	std::array<double, 128> pa, pb, pf;
	if (!sample_patch(img_a, a.centre, a.orientation, pa) || !sample_patch(img_b, b.centre, b.orientation, pb) ||
	    !sample_patch(img_b, b.centre, b.orientation + std::numbers::pi, pf))
		return inf;
	double s = 0.0, f = 0.0;
	for (std::size_t k = 0; k < pa.size(); ++k) {
		s += std::abs(pa[k] - pb[k]);
		f += std::abs(pa[k] - pf[k]);
	}
	return std::min(s, f);
}

struct ScoredPair {
	int from = 0;
	int to = 0;
	double score = 0.0;
};

/// A frame n -> n+1 correspondence kept by mutual best matching.
struct Match {
	int from = 0;
	int to = 0;
	double sad = 0.0;
	friend bool operator==(const Match&, const Match&) = default;
};

/**
 * Keeps (i, j) when j is i's lowest-score partner and i is j's lowest-score
 * partner among `candidates`; ties go to the lowest index. Non-finite scores
 * never match. Output is ordered by `from`.
 */
inline std::vector<Match> symmetric_match(std::size_t count_a, std::size_t count_b,
                                          std::span<const ScoredPair> candidates)
{
	constexpr double inf = std::numeric_limits<double>::infinity();
	std::vector<int> best_b(count_a, -1), best_a(count_b, -1);
	std::vector<double> score_b(count_a, inf), score_a(count_b, inf);
	for (const auto& c : candidates) {
		if (c.from < 0 || c.to < 0 || static_cast<std::size_t>(c.from) >= count_a ||
		    static_cast<std::size_t>(c.to) >= count_b)
			throw Error("match candidate index out of range");
		if (!std::isfinite(c.score))
			continue;
		if (c.score < score_b[c.from] || (c.score == score_b[c.from] && c.to < best_b[c.from])) {
			score_b[c.from] = c.score;
			best_b[c.from] = c.to;
		}
		if (c.score < score_a[c.to] || (c.score == score_a[c.to] && c.from < best_a[c.to])) {
			score_a[c.to] = c.score;
			best_a[c.to] = c.from;
		}
	}
	std::vector<Match> out;
	for (std::size_t i = 0; i < count_a; ++i) {
		const int j = best_b[i];
		if (j >= 0 && best_a[j] == static_cast<int>(i))
			out.push_back({static_cast<int>(i), j, score_b[i]});
	}
	return out;
}

/// Gated, SAD-scored mutual-best matches between two consecutive frames.
inline std::vector<Match> match_frames(const RasterImage& img_a, const RasterImage& img_b,
                                       std::span<const Detection> a, std::span<const Detection> b, const Gates& gates,
                                       double frames_per_s)
{
	std::vector<ScoredPair> scored;
	for (auto [i, j] : gate_pairs(a, b, gates, frames_per_s))
		scored.push_back({i, j, sad_score(img_a, img_b, a[i], b[j])});
	return symmetric_match(a.size(), b.size(), scored);
}

/// Three chained detections on frames n, n+1, n+2.
struct Tracklet {
	int frame = 0; // n
	std::array<Point2, 3> centres;

	Point2 v1() const { return centres[1] - centres[0]; }
	Point2 v2() const { return centres[2] - centres[1]; }
	double acceleration() const { return norm(v2() - v1()); }
};

/// Joins n->n+1 and n+1->n+2 matches on the shared detection and drops tracklets above the acceleration bound.
inline std::vector<Tracklet> chain_tracklets(std::span<const Match> first, std::span<const Match> second,
                                             std::span<const Detection> frame_n, std::span<const Detection> frame_n1,
                                             std::span<const Detection> frame_n2, const Gates& gates, int frame = 0)
{
	std::vector<int> next(frame_n1.size(), -1);
	for (const auto& m : second) {
		if (m.from < 0 || static_cast<std::size_t>(m.from) >= frame_n1.size() || m.to < 0 ||
		    static_cast<std::size_t>(m.to) >= frame_n2.size())
			throw Error("match index out of range");
		next[m.from] = m.to;
	}
	std::vector<Tracklet> out;
	for (const auto& m : first) {
		if (m.from < 0 || static_cast<std::size_t>(m.from) >= frame_n.size() || m.to < 0 ||
		    static_cast<std::size_t>(m.to) >= frame_n1.size())
			throw Error("match index out of range");
		const int k = next[m.to];
		if (k < 0)
			continue;
		Tracklet t{frame, {frame_n[m.from].centre, frame_n1[m.to].centre, frame_n2[k].centre}};
		if (t.acceleration() <= gates.max_acceleration)
			out.push_back(t);
	}
	return out;
}

/**
 * Tracklets over a whole sequence. `detections[n]` holds frame n's detections.
 * Frame pairs are matched concurrently; output is ordered by starting frame.
 */
inline std::vector<Tracklet> track_sequence(std::span<const RasterImage> frames,
                                            std::span<const std::vector<Detection>> detections, const Gates& gates,
                                            double frames_per_s)
{
	if (frames.size() != detections.size())
		throw Error("frame and detection list counts differ");
	gates.validate();
	if (frames.size() < 3)
		return {};
	std::vector<std::vector<Match>> matches(frames.size() - 1);
	parallel_for(matches.size(), [&](std::size_t n) {
		matches[n] = match_frames(frames[n], frames[n + 1], detections[n], detections[n + 1], gates, frames_per_s);
	});
	std::vector<Tracklet> out;
	for (std::size_t n = 0; n + 2 < frames.size(); ++n) {
		auto t = chain_tracklets(matches[n], matches[n + 1], detections[n], detections[n + 1], detections[n + 2], gates,
		                         static_cast<int>(n));
		out.insert(out.end(), t.begin(), t.end());
	}
	return out;
}

// Tracklet file: CSV "frame_n,x0,y0,x1,y1,x2,y2".

inline void write_tracklets(std::ostream& out, std::span<const Tracklet> tracklets)
{
	out << "frame_n,x0,y0,x1,y1,x2,y2\n" << std::setprecision(17);
	for (const auto& t : tracklets) {
		out << t.frame;
		for (const auto& c : t.centres)
			out << ',' << c.x << ',' << c.y;
		out << '\n';
	}
}

inline std::vector<Tracklet> read_tracklets(std::istream& in)
{
	std::vector<Tracklet> out;
	std::string line;
	int lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (line.empty() || (lineno == 1 && line.rfind("frame", 0) == 0))
			continue;
		std::replace(line.begin(), line.end(), ',', ' ');
		std::istringstream ls(line);
		Tracklet t;
		ls >> t.frame;
		for (auto& c : t.centres)
			ls >> c.x >> c.y;
		if (!ls)
			throw Error("malformed tracklet line " + std::to_string(lineno));
		out.push_back(t);
	}
	return out;
}

} // namespace vfield

#endif
