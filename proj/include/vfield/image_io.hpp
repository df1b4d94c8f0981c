#ifndef VFIELD_IMAGE_IO_HPP
#define VFIELD_IMAGE_IO_HPP

#include "vfield/raster.hpp"

#include <array>
#include <bit>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace vfield {

struct Rgb {
	std::uint8_t r = 0, g = 0, b = 0;
	friend bool operator==(Rgb, Rgb) = default;
};

using RgbImage = Image<Rgb>;

namespace detail {

inline std::ifstream open_in(const std::filesystem::path& path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw Error("cannot open " + path.string());
	return in;
}

inline std::ofstream open_out(const std::filesystem::path& path)
{
	std::ofstream out(path, std::ios::binary);
	if (!out)
		throw Error("cannot write " + path.string());
	return out;
}

// Netpbm header token, skipping whitespace and '#' comments.
inline long read_pnm_int(std::istream& in)
{
	int c = in.get();
	while (c != EOF) {
		if (c == '#') {
			while (c != EOF && c != '\n')
				c = in.get();
		} else if (!std::isspace(c)) {
			break;
		}
		c = in.get();
	}
	if (c == EOF || !std::isdigit(c))
		throw Error("malformed netpbm header");
	long value = 0;
	while (c != EOF && std::isdigit(c)) {
		value = value * 10 + (c - '0');
		if (value > 1'000'000'000)
			throw Error("netpbm header value too large");
		c = in.get();
	}
	// exactly one whitespace byte separates the header from raster data
	return value;
}

inline void put_u32(std::ostream& out, std::uint32_t v)
{
	const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
	                            static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
	out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& out, double v)
{
	const auto bits = std::bit_cast<std::uint64_t>(v);
	unsigned char b[8];
	for (int i = 0; i < 8; ++i)
		b[i] = static_cast<unsigned char>(bits >> (8 * i));
	out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& in)
{
	unsigned char b[4];
	if (!in.read(reinterpret_cast<char*>(b), 4))
		throw Error("unexpected end of binary file");
	return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline double get_f64(std::istream& in)
{
	unsigned char b[8];
	if (!in.read(reinterpret_cast<char*>(b), 8))
		throw Error("unexpected end of binary file");
	std::uint64_t bits = 0;
	for (int i = 0; i < 8; ++i)
		bits |= std::uint64_t(b[i]) << (8 * i);
	return std::bit_cast<double>(bits);
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

} // namespace detail

/// Binary greyscale PGM (P5). maxval 255 or 65535; intensities are mapped to [0,1].
inline RasterImage read_pgm(std::istream& in)
{
	char magic[2];
	if (!in.read(magic, 2) || magic[0] != 'P' || magic[1] != '5')
		throw Error("not a binary PGM (P5) stream");
	const long w = detail::read_pnm_int(in);
	const long h = detail::read_pnm_int(in);
	const long maxval = detail::read_pnm_int(in);
	if (maxval <= 0 || maxval > 65535)
		throw Error("unsupported PGM maxval");
	RasterImage img(static_cast<int>(w), static_cast<int>(h));
	const bool wide = maxval > 255;
	std::vector<unsigned char> buf(img.size() * (wide ? 2 : 1));
	if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
		throw Error("truncated PGM raster");
	auto px = img.pixels();
	for (std::size_t i = 0; i < px.size(); ++i) {
		const unsigned v = wide ? (unsigned(buf[2 * i]) << 8 | buf[2 * i + 1]) : buf[i];
		px[i] = static_cast<double>(v) / static_cast<double>(maxval);
	}
	return img;
}

inline RasterImage read_pgm(const std::filesystem::path& path)
{
	auto in = detail::open_in(path);
	return read_pgm(in);
}

/// Writes intensities clamped to [0,1]; 16-bit samples are big-endian per the netpbm format.
inline void write_pgm(std::ostream& out, const RasterImage& img, bool sixteen_bit = false)
{
	const unsigned maxval = sixteen_bit ? 65535u : 255u;
	out << "P5\n" << img.width() << ' ' << img.height() << '\n' << maxval << '\n';
	std::vector<unsigned char> buf;
	buf.reserve(img.size() * (sixteen_bit ? 2 : 1));
	for (double v : img.pixels()) {
		const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
		if (sixteen_bit)
			buf.push_back(static_cast<unsigned char>(q >> 8));
		buf.push_back(static_cast<unsigned char>(q & 0xff));
	}
	out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void write_pgm(const std::filesystem::path& path, const RasterImage& img, bool sixteen_bit = false)
{
	auto out = detail::open_out(path);
	write_pgm(out, img, sixteen_bit);
}

inline void write_ppm(std::ostream& out, const RgbImage& img)
{
	out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
	for (const Rgb& c : img.pixels()) {
		const char b[3] = {static_cast<char>(c.r), static_cast<char>(c.g), static_cast<char>(c.b)};
		out.write(b, 3);
	}
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img)
{
	auto out = detail::open_out(path);
	write_ppm(out, img);
}

inline RgbImage read_ppm(std::istream& in)
{
	char magic[2];
	if (!in.read(magic, 2) || magic[0] != 'P' || magic[1] != '6')
		throw Error("not a binary PPM (P6) stream");
	const long w = detail::read_pnm_int(in);
	const long h = detail::read_pnm_int(in);
	if (detail::read_pnm_int(in) != 255)
		throw Error("only 8-bit PPM is supported");
	RgbImage img(static_cast<int>(w), static_cast<int>(h));
	for (Rgb& c : img.pixels()) {
		unsigned char b[3];
		if (!in.read(reinterpret_cast<char*>(b), 3))
			throw Error("truncated PPM raster");
		c = {b[0], b[1], b[2]};
	}
	return img;
}

inline RgbImage read_ppm(const std::filesystem::path& path)
{
	auto in = detail::open_in(path);
	return read_ppm(in);
}

inline RgbImage to_rgb(const RasterImage& grey)
{
	RgbImage out(grey.width(), grey.height());
	auto dst = out.pixels();
	auto src = grey.pixels();
	for (std::size_t i = 0; i < src.size(); ++i) {
		const auto v = detail::to_byte(src[i]);
		dst[i] = {v, v, v};
	}
	return out;
}

// VFR1 raw raster: "VFR1", u32 width, u32 height, u32 kind, then little-endian samples.
enum class RasterKind : std::uint32_t { f64 = 0, u32 = 1 };

inline void write_vfr(std::ostream& out, const RasterImage& img)
{
	out.write("VFR1", 4);
	detail::put_u32(out, static_cast<std::uint32_t>(img.width()));
	detail::put_u32(out, static_cast<std::uint32_t>(img.height()));
	detail::put_u32(out, static_cast<std::uint32_t>(RasterKind::f64));
	for (double v : img.pixels())
		detail::put_f64(out, v);
}

inline void write_vfr(std::ostream& out, const LabelImage& img)
{
	out.write("VFR1", 4);
	detail::put_u32(out, static_cast<std::uint32_t>(img.width()));
	detail::put_u32(out, static_cast<std::uint32_t>(img.height()));
	detail::put_u32(out, static_cast<std::uint32_t>(RasterKind::u32));
	for (std::uint32_t v : img.pixels())
		detail::put_u32(out, v);
}

template <class T>
void write_vfr(const std::filesystem::path& path, const Image<T>& img)
{
	auto out = detail::open_out(path);
	write_vfr(out, img);
}

struct VfrHeader {
	int width = 0;
	int height = 0;
	RasterKind kind = RasterKind::f64;
};

inline VfrHeader read_vfr_header(std::istream& in)
{
	char magic[4];
	if (!in.read(magic, 4) || std::memcmp(magic, "VFR1", 4) != 0)
		throw Error("not a VFR1 raster");
	VfrHeader h;
	h.width = static_cast<int>(detail::get_u32(in));
	h.height = static_cast<int>(detail::get_u32(in));
	const auto kind = detail::get_u32(in);
	if (kind > 1)
		throw Error("unknown VFR1 element kind " + std::to_string(kind));
	h.kind = static_cast<RasterKind>(kind);
	return h;
}

/// Reads either element kind; label rasters are widened to double.
inline RasterImage read_vfr(std::istream& in)
{
	const auto h = read_vfr_header(in);
	RasterImage img(h.width, h.height);
	for (double& v : img.pixels())
		v = h.kind == RasterKind::f64 ? detail::get_f64(in) : static_cast<double>(detail::get_u32(in));
	return img;
}

inline LabelImage read_vfr_labels(std::istream& in)
{
	const auto h = read_vfr_header(in);
	if (h.kind != RasterKind::u32)
		throw Error("VFR1 raster does not hold labels");
	LabelImage img(h.width, h.height);
	for (auto& v : img.pixels())
		v = detail::get_u32(in);
	return img;
}

inline RasterImage read_vfr(const std::filesystem::path& path)
{
	auto in = detail::open_in(path);
	return read_vfr(in);
}

} // namespace vfield

#endif
