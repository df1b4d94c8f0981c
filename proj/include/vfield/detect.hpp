#ifndef VFIELD_DETECT_HPP
#define VFIELD_DETECT_HPP

#include "vfield/classify.hpp"
#include "vfield/raster.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <sstream>

namespace vfield {

/// A segmented car: region mean position and principal axis (mod pi).
struct Detection {
	int frame = 0;
	Point2 centre;
	double orientation = 0.0; // radians in [0, pi)
	int pixel_count = 0;
	double mean_response = 0.0;
	bool degenerate = false; // isotropic region, orientation fixed to 0
};

/// Region labels from region_grow; 0 marks unoccupied pixels.
using SegmentationMap = LabelImage;

/// Pixels strictly above all existing 8-neighbours and above `threshold`, in raster order.
inline std::vector<Pixel> find_local_maxima(const RasterImage& c, double threshold)
{
	std::vector<Pixel> out;
	const int w = c.width(), h = c.height();
	for (int y = 0; y < h; ++y)
		for (int x = 0; x < w; ++x) {
			const double v = c(x, y);
			if (!(v > threshold))
				continue;
			bool is_max = true;
			for (int dy = -1; dy <= 1 && is_max; ++dy)
				for (int dx = -1; dx <= 1; ++dx) {
					if ((dx == 0 && dy == 0) || !c.contains(x + dx, y + dy))
						continue;
					if (!(v > c(x + dx, y + dy))) {
						is_max = false;
						break;
					}
				}
			if (is_max)
				out.push_back({x, y});
		}
	return out;
}

/// Spread order of the 4-neighbourhood.
inline constexpr Pixel grow_offsets[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};

/**
 * Synchronous region growing. Seed i receives label i+1. Each iteration lets
 * every pixel occupied at the end of the previous iteration claim unoccupied
 * 4-neighbours whose response exceeds `threshold`; sources are visited in
 * raster order and the first claim on a pixel wins. Stops when nothing changes.
 *
 * Only pixels claimed in the previous iteration can still claim anything, so
 * each iteration walks that frontier instead of the whole image.
 */
inline SegmentationMap region_grow(const RasterImage& c, std::span<const Pixel> seeds, double threshold)
{
	SegmentationMap s(c.width(), c.height(), 0u);
	std::vector<Pixel> frontier;
	frontier.reserve(seeds.size());
	for (std::size_t i = 0; i < seeds.size(); ++i) {
		const Pixel p = seeds[i];
		if (!c.contains(p.x, p.y))
			throw Error("region seed outside the response image");
		if (!(c(p.x, p.y) > threshold))
			throw Error("region seed response does not exceed the growth threshold");
		if (s(p.x, p.y) != 0)
			throw Error("duplicate region seed");
		s(p.x, p.y) = static_cast<std::uint32_t>(i + 1);
		frontier.push_back(p);
	}

	std::vector<Pixel> next;
	while (!frontier.empty()) {
		std::sort(frontier.begin(), frontier.end());
		next.clear();
		for (const Pixel p : frontier) {
			const auto label = s(p.x, p.y);
			for (const Pixel d : grow_offsets) {
				const int qx = p.x + d.x, qy = p.y + d.y;
				if (c.contains(qx, qy) && s(qx, qy) == 0 && c(qx, qy) > threshold) {
					s(qx, qy) = label;
					next.push_back({qx, qy});
				}
			}
		}
		frontier.swap(next);
	}
	return s;
}

/// Principal-axis angle in [0, pi) of a 2x2 covariance; nullopt when the eigenvalue gap is below 1e-9.
inline std::optional<double> principal_axis(double cxx, double cxy, double cyy)
{
	const double half_diff = 0.5 * (cxx - cyy);
	const double root = std::sqrt(half_diff * half_diff + cxy * cxy);
	if (2.0 * root < 1e-9)
		return std::nullopt;
	const double lambda = 0.5 * (cxx + cyy) + root;
	// pick the better-conditioned of the two eigenvector forms
	const double vx = cxx >= cyy ? lambda - cyy : cxy;
	const double vy = cxx >= cyy ? cxy : lambda - cxx;
	double angle = std::atan2(vy, vx);
	if (angle < 0.0)
		angle += std::numbers::pi;
	if (angle >= std::numbers::pi)
		angle -= std::numbers::pi;
	return angle;
}

/// One detection per region of at least `min_pixels` pixels, in label order.
inline std::vector<Detection> extract_detections(const SegmentationMap& s, const RasterImage& response, int frame,
                                                 int min_pixels)
{
	if (response.width() != s.width() || response.height() != s.height())
		throw Error("segmentation and response dimensions differ");

	struct Moments {
		long count = 0;
		double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0, sr = 0;
	};
	std::vector<Moments> regions;
	for (int y = 0; y < s.height(); ++y)
		for (int x = 0; x < s.width(); ++x) {
			const auto label = s(x, y);
			if (label == 0)
				continue;
			if (label > regions.size())
				regions.resize(label);
			auto& m = regions[label - 1];
			++m.count;
			m.sx += x;
			m.sy += y;
			m.sxx += double(x) * x;
			m.syy += double(y) * y;
			m.sxy += double(x) * y;
			m.sr += response(x, y);
		}

	std::vector<Detection> out;
	for (const auto& m : regions) {
		if (m.count == 0 || m.count < min_pixels)
			continue;
		const double n = static_cast<double>(m.count);
		Detection d;
		d.frame = frame;
		d.centre = {m.sx / n, m.sy / n};
		const double cxx = m.sxx / n - d.centre.x * d.centre.x;
		const double cyy = m.syy / n - d.centre.y * d.centre.y;
		const double cxy = m.sxy / n - d.centre.x * d.centre.y;
		const auto axis = principal_axis(cxx, cxy, cyy);
		d.orientation = axis.value_or(0.0);
		d.degenerate = !axis.has_value();
		d.pixel_count = static_cast<int>(m.count);
		d.mean_response = m.sr / n;
		out.push_back(d);
	}
	return out;
}

struct DetectorOptions {
	double blur_sigma = 3.0;
	double threshold = 0.0;
	int min_pixels = 10;
};

struct DetectorStages {
	RasterImage response;
	RasterImage blurred;
	std::vector<Pixel> maxima;
	SegmentationMap segmentation;
	std::vector<Detection> detections;
};

/// Response, blur, maxima, region growing and moment extraction, keeping every stage.
inline DetectorStages detect_stages(const StrongClassifier& clf, const RasterImage& frame, int index,
                                    const DetectorOptions& opts = {})
{
	DetectorStages st;
	st.response = respond(clf, frame);
	st.blurred = gaussian_blur(st.response, opts.blur_sigma);
	st.maxima = find_local_maxima(st.blurred, opts.threshold);
	st.segmentation = region_grow(st.blurred, st.maxima, opts.threshold);
	st.detections = extract_detections(st.segmentation, st.blurred, index, opts.min_pixels);
	return st;
}

inline std::vector<Detection> detect_cars(const StrongClassifier& clf, const RasterImage& frame, int index,
                                          const DetectorOptions& opts = {})
{
	return detect_stages(clf, frame, index, opts).detections;
}

// Detections file: CSV "frame,x,y,theta,pixels,mean_response".

inline void write_detections(std::ostream& out, std::span<const Detection> dets)
{
	out << "frame,x,y,theta,pixels,mean_response\n" << std::setprecision(17);
	for (const auto& d : dets)
		out << d.frame << ',' << d.centre.x << ',' << d.centre.y << ',' << d.orientation << ',' << d.pixel_count << ','
		    << d.mean_response << '\n';
}

inline std::vector<Detection> read_detections(std::istream& in)
{
	std::vector<Detection> dets;
	std::string line;
	int lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (line.empty() || (lineno == 1 && line.rfind("frame", 0) == 0))
			continue;
		std::replace(line.begin(), line.end(), ',', ' ');
		std::istringstream ls(line);
		Detection d;
		if (!(ls >> d.frame >> d.centre.x >> d.centre.y >> d.orientation >> d.pixel_count >> d.mean_response))
			throw Error("malformed detection line " + std::to_string(lineno));
		dets.push_back(d);
	}
	return dets;
}

} // namespace vfield

#endif
