#include "relprop/attribution_file.hpp"

#include <bit>
#include <cstring>

#include "relprop/errors.hpp"
#include "relprop/io_util.hpp"

namespace relprop {

namespace {

constexpr char kMagic[4] = {'A', 'T', 'T', 'R'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;
    const std::string& origin;

    void need(std::size_t n) {
        if (bytes.size() - pos < n) fail(Errc::malformed_document, origin + ": truncated attribution file");
    }
    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * b);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * b);
        return v;
    }
};

} // namespace

void write_attribution(const std::filesystem::path& path, const AttributionMap& map) {
    const Tensor& r = map.relevance;
    if (r.rank() == 0) fail(Errc::shape_mismatch, "cannot persist an empty attribution");
    if (map.config_digest.size() > 0xffff) fail(Errc::invalid_config, "config digest is implausibly long");

    std::vector<std::uint8_t> out;
    out.reserve(32 + r.size() * 8 + map.config_digest.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);
    out.push_back(static_cast<std::uint8_t>(r.rank()));
    for (std::size_t d = 0; d < r.rank(); ++d) put_u32(out, static_cast<std::uint32_t>(r.extent(d)));
    put_u32(out, static_cast<std::uint32_t>(map.class_index));
    put_f64(out, map.output_logit);
    for (std::size_t i = 0; i < r.size(); ++i) put_f64(out, r[i]);
    out.push_back(static_cast<std::uint8_t>(map.config_digest.size() & 0xff));
    out.push_back(static_cast<std::uint8_t>(map.config_digest.size() >> 8));
    out.insert(out.end(), map.config_digest.begin(), map.config_digest.end());
    write_binary_file(path, out);
}

AttributionMap read_attribution(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_binary_file(path);
    const std::string origin = path.string();
    Reader in{bytes, 0, origin};

    in.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(Errc::malformed_document, origin + ": not an attribution file");
    in.pos = 4;
    const std::uint8_t version = in.u8();
    if (version != kVersion) {
        fail(Errc::malformed_document, origin + ": unsupported attribution version " + std::to_string(version));
    }
    const std::uint8_t rank = in.u8();
    if (rank == 0 || rank > 8) fail(Errc::malformed_document, origin + ": implausible rank " + std::to_string(rank));

    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
        shape[d] = in.u32();
        if (shape[d] == 0 || count > (1u << 28) / shape[d]) {
            fail(Errc::malformed_document, origin + ": implausible extents");
        }
        count *= shape[d];
    }

    AttributionMap map;
    map.class_index = in.u32();
    map.output_logit = std::bit_cast<double>(in.u64());
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(in.u64());
    map.relevance = Tensor(std::move(shape), std::move(values));

    const std::size_t digest_len = in.u8() | (static_cast<std::size_t>(in.u8()) << 8);
    in.need(digest_len);
    map.config_digest.assign(bytes.begin() + static_cast<std::ptrdiff_t>(in.pos),
                             bytes.begin() + static_cast<std::ptrdiff_t>(in.pos + digest_len));
    return map;
}

} // namespace relprop
