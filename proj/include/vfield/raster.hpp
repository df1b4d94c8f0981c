#ifndef VFIELD_RASTER_HPP
#define VFIELD_RASTER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vfield {

/// Raised for every contract violation in the library (bad inputs, malformed files).
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

struct Point2 {
	double x = 0.0;
	double y = 0.0;

	friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
	friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
	friend Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
	friend bool operator==(Point2 a, Point2 b) = default;
};

inline double norm(Point2 p) { return std::hypot(p.x, p.y); }

struct Pixel {
	int x = 0;
	int y = 0;
	friend bool operator==(Pixel a, Pixel b) = default;
	friend auto operator<=>(Pixel a, Pixel b) { return std::pair{a.y, a.x} <=> std::pair{b.y, b.x}; }
};

/**
 * Dense row-major 2D grid.
 *
 * Holds video frames (intensity in [0,1]), classifier responses and label maps.
 * A default-constructed image is empty; any sized image has width, height > 0.
 */
template <class T>
class Image {
public:
	using value_type = T;

	Image() = default;

	Image(int width, int height, T fill = T{}) : width_(width), height_(height)
	{
		if (width <= 0 || height <= 0)
			throw Error("image dimensions must be positive, got " + std::to_string(width) + "x" +
			            std::to_string(height));
		data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
	}

	Image(int width, int height, std::vector<T> data) : Image(width, height)
	{
		if (data.size() != data_.size())
			throw Error("image data length does not match dimensions");
		data_ = std::move(data);
	}

	int width() const { return width_; }
	int height() const { return height_; }
	bool empty() const { return data_.empty(); }
	std::size_t size() const { return data_.size(); }

	bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

	T& operator()(int x, int y) { return data_[index(x, y)]; }
	const T& operator()(int x, int y) const { return data_[index(x, y)]; }

	std::size_t index(int x, int y) const
	{
		return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
	}

	std::span<T> row(int y) { return {data_.data() + index(0, y), static_cast<std::size_t>(width_)}; }
	std::span<const T> row(int y) const
	{
		return {data_.data() + index(0, y), static_cast<std::size_t>(width_)};
	}

	std::span<T> pixels() { return data_; }
	std::span<const T> pixels() const { return data_; }

	friend bool operator==(const Image&, const Image&) = default;

private:
	int width_ = 0;
	int height_ = 0;
	std::vector<T> data_;
};

using RasterImage = Image<double>;
using LabelImage = Image<std::uint32_t>;

/**
 * Summed-area table of a RasterImage, optionally surrounded by a zero border of
 * `pad` pixels so rectangles reaching past the image read zero intensity.
 */
class IntegralImage {
public:
	IntegralImage() = default;

	explicit IntegralImage(const RasterImage& img, int pad = 0)
	    : width_(img.width()), height_(img.height()), pad_(pad), stride_(img.width() + 2 * pad + 1)
	{
		if (img.empty())
			throw Error("integral image of an empty raster");
		if (pad < 0)
			throw Error("negative integral image padding");
		const int rows = img.height() + 2 * pad + 1;
		sums_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(stride_), 0.0);
		for (int y = 1; y < rows; ++y) {
			const int sy = y - 1 - pad;
			double run = 0.0;
			double* out = &sums_[static_cast<std::size_t>(y) * stride_];
			const double* above = out - stride_;
			for (std::size_t x = 1; x < stride_; ++x) {
				const int sx = static_cast<int>(x) - 1 - pad;
				if (sy >= 0 && sy < img.height() && sx >= 0 && sx < img.width())
					run += img(sx, sy);
				out[x] = above[x] + run;
			}
		}
	}

	int width() const { return width_; }
	int height() const { return height_; }
	int pad() const { return pad_; }

	/// Sum over the half-open rectangle [x0,x1) x [y0,y1) in source coordinates.
	double rect_sum(int x0, int y0, int x1, int y1) const
	{
		if (x0 < -pad_ || y0 < -pad_ || x1 > width_ + pad_ || y1 > height_ + pad_ || x0 > x1 || y0 > y1)
			throw Error("rectangle out of integral image bounds");
		return corner(x1, y1) - corner(x0, y1) - corner(x1, y0) + corner(x0, y0);
	}

	/// Unchecked cumulative sum S(x, y) = sum of source pixels with sx < x, sy < y.
	double corner(int x, int y) const
	{
		return sums_[static_cast<std::size_t>(y + pad_) * stride_ + static_cast<std::size_t>(x + pad_)];
	}

	/// Pointer to the cumulative row for source row boundary y, indexed by x + pad.
	const double* corner_row(int y) const { return &sums_[static_cast<std::size_t>(y + pad_) * stride_]; }

private:
	int width_ = 0;
	int height_ = 0;
	int pad_ = 0;
	std::size_t stride_ = 0;
	std::vector<double> sums_;
};

/// Normalized Gaussian taps for offsets -r..r, r = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma)
{
	if (!(sigma > 0.0))
		return {1.0};
	const int radius = static_cast<int>(std::ceil(3.0 * sigma));
	std::vector<double> taps(2 * radius + 1);
	double total = 0.0;
	for (int k = -radius; k <= radius; ++k) {
		taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
		total += taps[k + radius];
	}
	for (double& t : taps)
		t /= total;
	return taps;
}

/// Separable Gaussian blur with edge clamping.
inline RasterImage gaussian_blur(const RasterImage& img, double sigma)
{
	if (img.empty())
		throw Error("blur of an empty raster");
	if (sigma < 0.0 || !std::isfinite(sigma))
		throw Error("blur sigma must be finite and non-negative");
	if (sigma == 0.0)
		return img;

	const auto taps = gaussian_kernel(sigma);
	const int radius = static_cast<int>(taps.size() / 2);
	const int w = img.width();
	const int h = img.height();

	RasterImage tmp(w, h);
	for (int y = 0; y < h; ++y) {
		const auto src = img.row(y);
		auto dst = tmp.row(y);
		for (int x = 0; x < w; ++x) {
			double acc = 0.0;
			for (int k = -radius; k <= radius; ++k)
				acc += taps[k + radius] * src[std::clamp(x + k, 0, w - 1)];
			dst[x] = acc;
		}
	}

	RasterImage out(w, h);
	for (int y = 0; y < h; ++y) {
		auto dst = out.row(y);
		for (int k = -radius; k <= radius; ++k) {
			const auto src = tmp.row(std::clamp(y + k, 0, h - 1));
			const double t = taps[k + radius];
			for (int x = 0; x < w; ++x)
				dst[x] += t * src[x];
		}
	}
	return out;
}

/**
 * Pixels along the segment p0-p1: unit steps along the major axis, both
 * endpoints included, each sample rounded to the nearest pixel. The walk is
 * done in a canonical endpoint order so both directions give the same set.
 */
inline std::vector<Pixel> rasterize_segment(Point2 p0, Point2 p1)
{
	if (!std::isfinite(p0.x) || !std::isfinite(p0.y) || !std::isfinite(p1.x) || !std::isfinite(p1.y))
		throw Error("segment endpoints must be finite");
	const bool reversed = std::pair{p1.x, p1.y} < std::pair{p0.x, p0.y};
	if (reversed)
		std::swap(p0, p1);

	const double dx = p1.x - p0.x;
	const double dy = p1.y - p0.y;
	const int steps = static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy))));

	std::vector<Pixel> out;
	out.reserve(static_cast<std::size_t>(steps) + 1);
	for (int k = 0; k <= steps; ++k) {
		const double t = steps == 0 ? 0.0 : static_cast<double>(k) / steps;
		const Pixel p{static_cast<int>(std::lround(p0.x + t * dx)), static_cast<int>(std::lround(p0.y + t * dy))};
		if (out.empty() || !(out.back() == p))
			out.push_back(p);
	}
	if (reversed)
		std::reverse(out.begin(), out.end());
	return out;
}

/// Bilinear sample; false when (x, y) falls outside [0, w-1] x [0, h-1].
inline bool sample_bilinear(const RasterImage& img, double x, double y, double& value)
{
	if (!(x >= 0.0 && y >= 0.0 && x <= img.width() - 1 && y <= img.height() - 1))
		return false;
	const int x0 = std::min(static_cast<int>(x), img.width() - 1);
	const int y0 = std::min(static_cast<int>(y), img.height() - 1);
	const int x1 = std::min(x0 + 1, img.width() - 1);
	const int y1 = std::min(y0 + 1, img.height() - 1);
	const double fx = x - x0;
	const double fy = y - y0;
	const double top = (1.0 - fx) * img(x0, y0) + fx * img(x1, y0);
	const double bottom = (1.0 - fx) * img(x0, y1) + fx * img(x1, y1);
	value = (1.0 - fy) * top + fy * bottom;
	return true;
}

} // namespace vfield

#endif
