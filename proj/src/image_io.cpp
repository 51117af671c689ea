#include "uhdformer/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>

#include "uhdformer/fs.hpp"

namespace uhd {

namespace {

constexpr uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

uint32_t be32(const std::vector<uint8_t>& d, size_t off) {
    return (uint32_t(d[off]) << 24) | (uint32_t(d[off + 1]) << 16) | (uint32_t(d[off + 2]) << 8) |
           uint32_t(d[off + 3]);
}

void push_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

void push_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    push_be32(out, uint32_t(data.size()));
    const size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = uint32_t(::crc32(0, out.data() + type_at, uInt(4 + data.size())));
    push_be32(out, crc);
}

ImageBuffer decode_png(const std::vector<uint8_t>& d, const std::string& path) {
    size_t off = 8;
    bool seen_end = false;
    int64_t w = 0, h = 0;
    std::vector<uint8_t> idat;
    while (!seen_end) {
        if (off + 8 > d.size())
            throw FormatError(path + ": truncated chunk header at byte " + std::to_string(off));
        const uint32_t len = be32(d, off);
        if (off + 12 + len > d.size())
            throw FormatError(path + ": truncated chunk data at byte " + std::to_string(off + 8));
        const char* type = reinterpret_cast<const char*>(d.data() + off + 4);
        const uint32_t want_crc = be32(d, off + 8 + len);
        const uint32_t got_crc = uint32_t(::crc32(0, d.data() + off + 4, uInt(4 + len)));
        if (want_crc != got_crc)
            throw FormatError(path + ": chunk crc mismatch at byte " + std::to_string(off + 8 + len));

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (w != 0 || len != 13)
                throw FormatError(path + ": malformed IHDR at byte " + std::to_string(off));
            w = be32(d, off + 8);
            h = be32(d, off + 12);
            if (w < 1 || h < 1 || w > (1 << 24) || h > (1 << 24))
                throw FormatError(path + ": bad image extents at byte " + std::to_string(off + 8));
            const uint8_t depth = d[off + 16], color = d[off + 17];
            const uint8_t comp = d[off + 18], filt = d[off + 19], inter = d[off + 20];
            if (depth != 8 || color != 2)
                throw FormatError(path + ": only 8-bit RGB supported, header at byte " + std::to_string(off + 16));
            if (comp != 0 || filt != 0 || inter != 0)
                throw FormatError(path + ": unsupported encoding flags at byte " + std::to_string(off + 18));
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            if (w == 0) throw FormatError(path + ": IDAT before IHDR at byte " + std::to_string(off));
            idat.insert(idat.end(), d.begin() + long(off + 8), d.begin() + long(off + 8 + len));
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_end = true;
        }
        off += size_t(12) + len;
    }
    if (w == 0 || idat.empty()) throw FormatError(path + ": missing IHDR or IDAT");

    const int64_t stride = w * 3;
    std::vector<uint8_t> raw(size_t(h) * size_t(stride + 1));
    uLongf out_len = uLongf(raw.size());
    if (uncompress(raw.data(), &out_len, idat.data(), uLong(idat.size())) != Z_OK ||
        out_len != uLongf(raw.size()))
        throw FormatError(path + ": corrupt compressed image data");

    ImageBuffer buf;
    buf.width = w;
    buf.height = h;
    buf.pixels.resize(size_t(h) * size_t(stride));
    for (int64_t y = 0; y < h; ++y) {
        const uint8_t f = raw[size_t(y) * size_t(stride + 1)];
        const uint8_t* src = raw.data() + size_t(y) * size_t(stride + 1) + 1;
        uint8_t* cur = buf.pixels.data() + size_t(y) * size_t(stride);
        const uint8_t* up = y > 0 ? cur - stride : nullptr;
        for (int64_t x = 0; x < stride; ++x) {
            const int a = x >= 3 ? cur[x - 3] : 0;
            const int b = up ? up[x] : 0;
            const int c = (up && x >= 3) ? up[x - 3] : 0;
            int v = src[x];
            switch (f) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default:
                    throw FormatError(path + ": unsupported scanline filter " + std::to_string(f) +
                                      " in row " + std::to_string(y));
            }
            cur[x] = uint8_t(v & 0xff);
        }
    }
    return buf;
}

std::vector<uint8_t> encode_png(const ImageBuffer& buf) {
    const int64_t stride = buf.width * 3;
    std::vector<uint8_t> raw(size_t(buf.height) * size_t(stride + 1));
    for (int64_t y = 0; y < buf.height; ++y) {
        raw[size_t(y) * size_t(stride + 1)] = 0;  // no per-row filtering
        std::memcpy(raw.data() + size_t(y) * size_t(stride + 1) + 1,
                    buf.pixels.data() + size_t(y) * size_t(stride), size_t(stride));
    }
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<uint8_t> packed(bound);
    if (compress2(packed.data(), &bound, raw.data(), uLong(raw.size()), Z_BEST_COMPRESSION) != Z_OK)
        throw IoError("png compression failed");
    packed.resize(bound);

    std::vector<uint8_t> out(kPngSig, kPngSig + 8);
    std::vector<uint8_t> ihdr;
    push_be32(ihdr, uint32_t(buf.width));
    push_be32(ihdr, uint32_t(buf.height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // depth, rgb, deflate, adaptive, no interlace
    push_chunk(out, "IHDR", ihdr);
    push_chunk(out, "IDAT", packed);
    push_chunk(out, "IEND", {});
    return out;
}

ImageBuffer decode_ppm(const std::vector<uint8_t>& d, const std::string& path) {
    size_t off = 2;  // past "P6"
    auto skip_space = [&] {
        while (off < d.size()) {
            if (d[off] == '#') {
                while (off < d.size() && d[off] != '\n') ++off;
            } else if (std::isspace(d[off])) {
                ++off;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> int64_t {
        skip_space();
        const size_t start = off;
        int64_t v = 0;
        while (off < d.size() && d[off] >= '0' && d[off] <= '9') {
            v = v * 10 + (d[off] - '0');
            if (v > (int64_t(1) << 32)) break;
            ++off;
        }
        if (off == start)
            throw FormatError(path + ": expected integer at byte " + std::to_string(off));
        return v;
    };

    ImageBuffer buf;
    buf.width = read_int();
    buf.height = read_int();
    const int64_t maxval = read_int();
    if (buf.width < 1 || buf.height < 1)
        throw FormatError(path + ": bad extents in header at byte " + std::to_string(off));
    if (maxval != 255)
        throw FormatError(path + ": only maxval 255 supported, header at byte " + std::to_string(off));
    if (off >= d.size() || !std::isspace(d[off]))
        throw FormatError(path + ": missing separator at byte " + std::to_string(off));
    ++off;

    const size_t need = size_t(buf.width) * size_t(buf.height) * 3;
    if (d.size() - off < need)
        throw FormatError(path + ": truncated pixel data at byte " + std::to_string(d.size()));
    buf.pixels.assign(d.begin() + long(off), d.begin() + long(off + need));
    return buf;
}

void check_buffer(const ImageBuffer& buf) {
    if (buf.width < 1 || buf.height < 1 ||
        buf.pixels.size() != size_t(buf.width) * size_t(buf.height) * 3)
        throw ContractError("image buffer extents do not match pixel count");
}

}  // namespace

ImageBuffer read_image(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return decode_png(bytes, path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path);
    throw FormatError(path + ": unrecognized image magic at byte 0");
}

void write_image(const std::string& path, const ImageBuffer& buf) {
    check_buffer(buf);
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".png") {
        atomic_write_bytes(path, encode_png(buf));
    } else if (ext == ".ppm") {
        std::string header = "P6\n" + std::to_string(buf.width) + " " + std::to_string(buf.height) + "\n255\n";
        std::vector<uint8_t> out(header.begin(), header.end());
        out.insert(out.end(), buf.pixels.begin(), buf.pixels.end());
        atomic_write_bytes(path, out);
    } else {
        throw ConfigError("write_image: unsupported extension \"" + ext + "\" (use .png or .ppm)");
    }
}

Tensor image_to_tensor(const ImageBuffer& buf, DType dt) {
    check_buffer(buf);
    Tensor t = Tensor::zeros(Shape(1, 3, buf.height, buf.width), dt);
    for (int64_t y = 0; y < buf.height; ++y)
        for (int64_t x = 0; x < buf.width; ++x)
            for (int64_t c = 0; c < 3; ++c)
                t.set(0, c, y, x, double(buf.pixels[size_t((y * buf.width + x) * 3 + c)]) / 255.0);
    return t;
}

ImageBuffer tensor_to_image(const Tensor& t) {
    const auto& sh = t.shape();
    if (sh.n() != 1 || sh.c() != 3)
        throw ShapeError("tensor_to_image: expected (1,3,h,w), got " + sh.str());
    ImageBuffer buf;
    buf.height = sh.h();
    buf.width = sh.w();
    buf.pixels.resize(size_t(sh.h()) * size_t(sh.w()) * 3);
    for (int64_t y = 0; y < sh.h(); ++y)
        for (int64_t x = 0; x < sh.w(); ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const double v = std::min(1.0, std::max(0.0, t.at(0, c, y, x)));
                buf.pixels[size_t((y * sh.w() + x) * 3 + c)] = uint8_t(std::lround(v * 255.0));
            }
    return buf;
}

}  // namespace uhd
