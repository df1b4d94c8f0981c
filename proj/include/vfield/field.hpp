#ifndef VFIELD_FIELD_HPP
#define VFIELD_FIELD_HPP

#include "vfield/image_io.hpp"
#include "vfield/raster.hpp"
#include "vfield/track.hpp"

#include <map>
#include <numbers>
#include <optional>

namespace vfield {

/// Image size plus the velocity binning shared by every pixel histogram.
struct FieldGeometry {
	int width = 0;
	int height = 0;
	double range = 30.0;    // bins cover [-range, +range] px/frame on each axis
	double bin_width = 1.0; // px/frame

	void validate() const
	{
		if (width <= 0 || height <= 0)
			throw Error("field dimensions must be positive");
		if (!(range > 0.0) || !(bin_width > 0.0) || !std::isfinite(range) || !std::isfinite(bin_width))
			throw Error("field range and bin width must be positive");
		if (bins_per_axis() > 4001)
			throw Error("field binning too fine");
	}

	int half_bins() const { return static_cast<int>(std::floor(range / bin_width + 1e-9)); }
	int bins_per_axis() const { return 2 * half_bins() + 1; }

	/// Velocity at the centre of bin (ix, iy).
	Point2 bin_velocity(int ix, int iy) const
	{
		return {(ix - half_bins()) * bin_width, (iy - half_bins()) * bin_width};
	}

	friend bool operator==(const FieldGeometry&, const FieldGeometry&) = default;
};

/// Argmax bin of one pixel histogram.
struct Mode {
	int bin_x = 0;
	int bin_y = 0;
	Point2 velocity;
	double speed = 0.0;
	double direction = 0.0; // [0, 2pi); NaN when speed is zero
	double mass = 0.0;
};

/**
 * Per-pixel 2D histograms of velocity, stored sparsely: only pixels some
 * tracklet segment passed through hold a histogram. Bin (ix, iy) is addressed
 * as iy * bins_per_axis + ix. Mutation requires exclusive access; build
 * partial fields concurrently and merge them.
 */
class VelocityField {
public:
	using Histogram = std::map<std::uint32_t, double>;

	VelocityField() = default;
	explicit VelocityField(FieldGeometry geometry) : geometry_(geometry) { geometry_.validate(); }

	const FieldGeometry& geometry() const { return geometry_; }
	const std::map<std::uint32_t, Histogram>& histograms() const { return pixels_; }

	const Histogram* histogram(Pixel p) const
	{
		if (!inside(p))
			return nullptr;
		auto it = pixels_.find(pixel_key(p));
		return it == pixels_.end() ? nullptr : &it->second;
	}

	double mass_at(Pixel p) const
	{
		double m = 0.0;
		if (const auto* h = histogram(p))
			for (const auto& [bin, mass] : *h)
				m += mass;
		return m;
	}

	double total_mass() const
	{
		double m = 0.0;
		for (const auto& [key, h] : pixels_)
			for (const auto& [bin, mass] : h)
				m += mass;
		return m;
	}

	void add(Pixel p, std::uint32_t bin, double mass)
	{
		if (!inside(p))
			throw Error("field pixel out of bounds");
		const auto nb = static_cast<std::uint32_t>(geometry_.bins_per_axis());
		if (bin >= nb * nb)
			throw Error("velocity bin out of range");
		if (!(mass >= 0.0) || !std::isfinite(mass))
			throw Error("bin mass must be finite and non-negative");
		pixels_[pixel_key(p)][bin] += mass;
	}

	/**
	 * Bin weights of a unit-mass blob at `velocity`: a 2D Gaussian of `sigma`
	 * bins centred at the exact (sub-bin) velocity, truncated at 3 sigma and
	 * renormalized after clipping. A blob narrower than the bin spacing
	 * collapses onto the nearest bin.
	 */
	std::vector<std::pair<std::uint32_t, double>> blob(Point2 velocity, double sigma) const
	{
		check_velocity(velocity);
		if (!(sigma >= 0.0) || !std::isfinite(sigma))
			throw Error("blob sigma must be finite and non-negative");
		const int nb = geometry_.bins_per_axis();
		const double ux = velocity.x / geometry_.bin_width + geometry_.half_bins();
		const double uy = velocity.y / geometry_.bin_width + geometry_.half_bins();
		auto key = [nb](int ix, int iy) { return static_cast<std::uint32_t>(iy * nb + ix); };

		std::vector<std::pair<std::uint32_t, double>> out;
		if (sigma > 0.0) {
			const double reach = 3.0 * sigma;
			const int xa = std::max(0, static_cast<int>(std::ceil(ux - reach)));
			const int xb = std::min(nb - 1, static_cast<int>(std::floor(ux + reach)));
			const int ya = std::max(0, static_cast<int>(std::ceil(uy - reach)));
			const int yb = std::min(nb - 1, static_cast<int>(std::floor(uy + reach)));
			double total = 0.0;
			for (int iy = ya; iy <= yb; ++iy)
				for (int ix = xa; ix <= xb; ++ix) {
					const double d2 = (ix - ux) * (ix - ux) + (iy - uy) * (iy - uy);
					if (d2 > reach * reach)
						continue;
					const double w = std::exp(-0.5 * d2 / (sigma * sigma));
					if (w > 0.0) {
						out.emplace_back(key(ix, iy), w);
						total += w;
					}
				}
			for (auto& [bin, w] : out)
				w /= total;
		}
		if (out.empty()) {
			const int ix = std::clamp(static_cast<int>(std::lround(ux)), 0, nb - 1);
			const int iy = std::clamp(static_cast<int>(std::lround(uy)), 0, nb - 1);
			out.emplace_back(key(ix, iy), 1.0);
		}
		return out;
	}

	/// Adds one unit blob at velocity `to - from` to every pixel of the segment.
	void deposit_segment(Point2 from, Point2 to, double sigma)
	{
		const auto weights = blob(to - from, sigma);
		const auto path = rasterize_segment(from, to);
		for (const Pixel p : path)
			if (!inside(p))
				throw Error("tracklet segment leaves the field");
		for (const Pixel p : path) {
			auto& h = pixels_[pixel_key(p)];
			for (const auto& [bin, w] : weights)
				h[bin] += w;
		}
	}

	/// Deposits both segments of a tracklet; validates both before touching the field.
	void deposit(const Tracklet& t, double sigma)
	{
		check_velocity(t.v1());
		check_velocity(t.v2());
		for (const auto& c : t.centres)
			if (!inside({static_cast<int>(std::lround(c.x)), static_cast<int>(std::lround(c.y))}))
				throw Error("tracklet leaves the field");
		deposit_segment(t.centres[0], t.centres[1], sigma);
		deposit_segment(t.centres[1], t.centres[2], sigma);
	}

	/// Bin-wise sum with a field of identical geometry.
	void merge(const VelocityField& other)
	{
		if (!(other.geometry_ == geometry_))
			throw Error("cannot merge fields of different geometry");
		for (const auto& [key, h] : other.pixels_) {
			auto& dst = pixels_[key];
			for (const auto& [bin, mass] : h)
				dst[bin] += mass;
		}
	}

	/// Argmax bin at `p` (lowest bin index on ties), or nullopt for an empty histogram.
	std::optional<Mode> mode(Pixel p) const
	{
		const auto* h = histogram(p);
		if (!h)
			return std::nullopt;
		return mode_of(*h);
	}

	std::optional<Mode> mode_of(const Histogram& h) const
	{
		const Histogram::value_type* best = nullptr;
		for (const auto& entry : h)
			if (entry.second > 0.0 && (!best || entry.second > best->second))
				best = &entry;
		if (!best)
			return std::nullopt;
		const int nb = geometry_.bins_per_axis();
		Mode m;
		m.bin_x = static_cast<int>(best->first) % nb;
		m.bin_y = static_cast<int>(best->first) / nb;
		m.velocity = geometry_.bin_velocity(m.bin_x, m.bin_y);
		m.speed = norm(m.velocity);
		m.mass = best->second;
		if (m.speed > 0.0) {
			m.direction = std::atan2(m.velocity.y, m.velocity.x);
			if (m.direction < 0.0)
				m.direction += 2.0 * std::numbers::pi;
		} else {
			m.direction = std::numeric_limits<double>::quiet_NaN();
		}
		return m;
	}

	friend bool operator==(const VelocityField&, const VelocityField&) = default;

private:
	bool inside(Pixel p) const { return p.x >= 0 && p.y >= 0 && p.x < geometry_.width && p.y < geometry_.height; }

	std::uint32_t pixel_key(Pixel p) const
	{
		return static_cast<std::uint32_t>(p.y) * static_cast<std::uint32_t>(geometry_.width) +
		       static_cast<std::uint32_t>(p.x);
	}

	void check_velocity(Point2 v) const
	{
		if (!(std::abs(v.x) <= geometry_.range && std::abs(v.y) <= geometry_.range))
			throw Error("velocity outside the histogram range");
	}

	FieldGeometry geometry_;
	std::map<std::uint32_t, Histogram> pixels_;
};

/// Deposits every tracklet of the stream.
inline void deposit_all(VelocityField& field, std::span<const Tracklet> tracklets, double sigma)
{
	for (const auto& t : tracklets)
		field.deposit(t, sigma);
}

/// Modal speed and direction per pixel; NaN marks absent (and, for direction, zero-speed) pixels.
struct ModeMap {
	RasterImage speed;
	RasterImage direction;
};

inline ModeMap mode_map(const VelocityField& field)
{
	const auto& g = field.geometry();
	constexpr double nan = std::numeric_limits<double>::quiet_NaN();
	ModeMap out{RasterImage(g.width, g.height, nan), RasterImage(g.width, g.height, nan)};
	for (const auto& [key, h] : field.histograms()) {
		const auto m = field.mode_of(h);
		if (!m)
			continue;
		const int x = static_cast<int>(key % static_cast<std::uint32_t>(g.width));
		const int y = static_cast<int>(key / static_cast<std::uint32_t>(g.width));
		out.speed(x, y) = m->speed;
		out.direction(x, y) = m->direction;
	}
	return out;
}

/**
 * Speed colour ramp over fraction f = min(speed / max_speed, 1), linear between
 * blue (0), cyan (0.25), green (0.5), yellow (0.75) and red (1).
 */
inline Rgb speed_colour(double speed, double max_speed)
{
	static constexpr Rgb stops[5] = {{0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
	const double f = std::clamp(speed / max_speed, 0.0, 1.0) * 4.0;
	const int i = std::min(static_cast<int>(f), 3);
	const double t = f - i;
	auto mix = [t](std::uint8_t a, std::uint8_t b) {
		return static_cast<std::uint8_t>(std::lround((1.0 - t) * a + t * b));
	};
	return {mix(stops[i].r, stops[i + 1].r), mix(stops[i].g, stops[i + 1].g), mix(stops[i].b, stops[i + 1].b)};
}

/// Fully saturated hue with hue angle equal to the direction (0 = +x, red).
inline Rgb direction_colour(double direction)
{
	double h = std::fmod(direction, 2.0 * std::numbers::pi);
	if (h < 0.0)
		h += 2.0 * std::numbers::pi;
	const double sector = h / (std::numbers::pi / 3.0);
	const int i = std::min(static_cast<int>(sector), 5);
	const double f = sector - i;
	const auto up = static_cast<std::uint8_t>(std::lround(255.0 * f));
	const auto down = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - f)));
	switch (i) {
	case 0: return {255, up, 0};
	case 1: return {down, 255, 0};
	case 2: return {0, 255, up};
	case 3: return {0, down, 255};
	case 4: return {up, 0, 255};
	default: return {255, 0, down};
	}
}

struct RenderOptions {
	double max_speed = 15.0; // px/frame at the red end of the ramp
	double alpha = 1.0;      // overlay opacity over the base image
};

struct RenderedMaps {
	ModeMap modes;
	RasterImage speed_grey;     // speed / max_speed where known, base image elsewhere
	RasterImage direction_grey; // direction / 2pi where defined, base image elsewhere
	RgbImage speed_overlay;
	RgbImage direction_overlay;
};

/**
 * Mode maps drawn over the base image. Pixels without data show the base
 * image; zero-speed pixels get a speed colour but no direction hue.
 */
inline RenderedMaps render_maps(const VelocityField& field, const RasterImage& base, const RenderOptions& opts = {})
{
	const auto& g = field.geometry();
	if (base.width() != g.width || base.height() != g.height)
		throw Error("base image dimensions differ from the field");
	if (!(opts.max_speed > 0.0) || !(opts.alpha >= 0.0 && opts.alpha <= 1.0))
		throw Error("invalid render options");

	RenderedMaps out{mode_map(field), base, base, to_rgb(base), to_rgb(base)};
	auto blend = [&](Rgb under, Rgb over) {
		auto mix = [&](std::uint8_t a, std::uint8_t b) {
			return static_cast<std::uint8_t>(std::lround((1.0 - opts.alpha) * a + opts.alpha * b));
		};
		return Rgb{mix(under.r, over.r), mix(under.g, over.g), mix(under.b, over.b)};
	};
	for (int y = 0; y < g.height; ++y)
		for (int x = 0; x < g.width; ++x) {
			const double s = out.modes.speed(x, y);
			if (std::isnan(s))
				continue;
			out.speed_grey(x, y) = std::min(s / opts.max_speed, 1.0);
			out.speed_overlay(x, y) = blend(out.speed_overlay(x, y), speed_colour(s, opts.max_speed));
			const double d = out.modes.direction(x, y);
			if (std::isnan(d))
				continue;
			out.direction_grey(x, y) = d / (2.0 * std::numbers::pi);
			out.direction_overlay(x, y) = blend(out.direction_overlay(x, y), direction_colour(d));
		}
	return out;
}

// VFF1 field file, little-endian:
//   "VFF1", u32 width, u32 height, f64 range, f64 bin_width, u32 pixel_count,
//   then per pixel in ascending (y, x): u32 x, u32 y, u32 bin_count,
//   bin_count x (u32 bin index, f64 mass) in ascending bin order.

inline void write_field(std::ostream& out, const VelocityField& field)
{
	const auto& g = field.geometry();
	out.write("VFF1", 4);
	detail::put_u32(out, static_cast<std::uint32_t>(g.width));
	detail::put_u32(out, static_cast<std::uint32_t>(g.height));
	detail::put_f64(out, g.range);
	detail::put_f64(out, g.bin_width);
	detail::put_u32(out, static_cast<std::uint32_t>(field.histograms().size()));
	for (const auto& [key, h] : field.histograms()) {
		detail::put_u32(out, key % static_cast<std::uint32_t>(g.width));
		detail::put_u32(out, key / static_cast<std::uint32_t>(g.width));
		std::uint32_t nonzero = 0;
		for (const auto& [bin, mass] : h)
			nonzero += mass != 0.0;
		detail::put_u32(out, nonzero);
		for (const auto& [bin, mass] : h)
			if (mass != 0.0) {
				detail::put_u32(out, bin);
				detail::put_f64(out, mass);
			}
	}
}

inline VelocityField read_field(std::istream& in)
{
	char magic[4];
	if (!in.read(magic, 4) || std::memcmp(magic, "VFF1", 4) != 0)
		throw Error("not a VFF1 field file");
	FieldGeometry g;
	g.width = static_cast<int>(detail::get_u32(in));
	g.height = static_cast<int>(detail::get_u32(in));
	g.range = detail::get_f64(in);
	g.bin_width = detail::get_f64(in);
	VelocityField field(g);
	const auto count = detail::get_u32(in);
	for (std::uint32_t i = 0; i < count; ++i) {
		const auto x = detail::get_u32(in);
		const auto y = detail::get_u32(in);
		const auto bins = detail::get_u32(in);
		for (std::uint32_t b = 0; b < bins; ++b) {
			const auto bin = detail::get_u32(in);
			const double mass = detail::get_f64(in);
			field.add({static_cast<int>(x), static_cast<int>(y)}, bin, mass);
		}
	}
	return field;
}

inline void write_field(const std::filesystem::path& path, const VelocityField& field)
{
	auto out = detail::open_out(path);
	write_field(out, field);
}

inline VelocityField read_field(const std::filesystem::path& path)
{
	auto in = detail::open_in(path);
	return read_field(in);
}

} // namespace vfield

#endif
