#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedobd/model.hpp"
#include "fedobd/quantize.hpp"
#include "fedobd/tensor.hpp"

namespace fedobd {

// ---------------------------------------------------------------------------
// Wire format (documented in docs/wire_format.md). Little-endian throughout.
// Header: magic 0xFB, version 0x01, kind, stage, round u32, then client u32
// for update kinds. Quantized tensors carry s/offset/d, the layout metadata,
// and a sign+level bitstream padded to a byte boundary so each tensor costs
// exactly ceil(payload_bits/8) bytes.
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kWireMagic = 0xFB;
inline constexpr std::uint8_t kWireVersion = 0x01;

enum class MessageKind : std::uint8_t {
    block_update = 1,  // quantized per-block diffs, client -> server
    global_model = 2,  // quantized full model, server -> clients
    raw_update = 3,    // uncompressed 32-bit model, client -> server
    raw_global = 4,    // uncompressed 32-bit model, server -> clients
};

struct DecodeError : std::runtime_error {
    std::size_t offset;
    DecodeError(std::size_t off, const std::string& what)
        : std::runtime_error("decode error at byte " + std::to_string(off) + ": " + what),
          offset(off) {}
};

namespace wire {

class Writer {
public:
    std::vector<std::uint8_t> take() { return std::move(buf_); }
    std::size_t size() const { return buf_.size(); }

    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v), 4); }

    void str(const std::string& s) {
        if (s.size() > 0xFFFF) throw std::invalid_argument("name too long");
        u16(static_cast<std::uint16_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    std::vector<std::uint8_t>& raw() { return buf_; }

private:
    void put_le(std::uint64_t v, unsigned bytes) {
        for (unsigned i = 0; i < bytes; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == data_.size(); }

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    double f64() { return std::bit_cast<double>(get_le(8)); }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get_le(4))); }

    std::string str() {
        std::size_t len = u16();
        need(len, "string");
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), len);
        pos_ += len;
        return s;
    }

    void need(std::size_t n, const char* what) {
        if (pos_ + n > data_.size())
            throw DecodeError(pos_, std::string("truncated ") + what);
    }

    [[noreturn]] void fail(const std::string& what) const { throw DecodeError(pos_, what); }

private:
    std::uint64_t get_le(unsigned bytes) {
        need(bytes, "field");
        std::uint64_t v = 0;
        for (unsigned i = 0; i < bytes; ++i)
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += bytes;
        return v;
    }
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

// LSB-first bit packing within bytes.
class BitWriter {
public:
    explicit BitWriter(Writer& out) : out_(out) {}

    void put(std::uint64_t value, unsigned bits) {
        for (unsigned taken = 0; taken < bits;) {
            unsigned take = std::min(8u - fill_, bits - taken);
            auto chunk = static_cast<std::uint8_t>((value >> taken) & ((1u << take) - 1));
            acc_ |= static_cast<std::uint8_t>(chunk << fill_);
            fill_ += take;
            taken += take;
            if (fill_ == 8) {
                out_.u8(acc_);
                acc_ = 0;
                fill_ = 0;
            }
        }
    }
    void pad_to_byte() {
        if (fill_ > 0) {
            out_.u8(acc_);
            acc_ = 0;
            fill_ = 0;
        }
    }

private:
    Writer& out_;
    std::uint8_t acc_ = 0;
    unsigned fill_ = 0;
};

class BitReader {
public:
    explicit BitReader(Reader& in) : in_(in) {}

    std::uint64_t get(unsigned bits) {
        std::uint64_t value = 0;
        for (unsigned taken = 0; taken < bits;) {
            if (avail_ == 0) {
                acc_ = in_.u8();
                avail_ = 8;
            }
            unsigned take = std::min(avail_, bits - taken);
            value |= static_cast<std::uint64_t>(acc_ & ((1u << take) - 1)) << taken;
            acc_ >>= take;
            avail_ -= take;
            taken += take;
        }
        return value;
    }
    void align() {
        acc_ = 0;
        avail_ = 0;
    }

private:
    Reader& in_;
    std::uint8_t acc_ = 0;
    unsigned avail_ = 0;
};

inline void write_layout(Writer& w, const std::vector<LayoutEntry>& layout) {
    w.u32(static_cast<std::uint32_t>(layout.size()));
    for (const auto& entry : layout) {
        w.str(entry.name);
        w.u64(entry.offset);
        w.u64(entry.length);
        w.u8(static_cast<std::uint8_t>(entry.shape.size()));
        for (std::size_t dim : entry.shape) w.u64(dim);
    }
}

inline std::vector<LayoutEntry> read_layout(Reader& r) {
    std::uint32_t count = r.u32();
    std::vector<LayoutEntry> layout;
    layout.reserve(count);
    std::size_t expected_offset = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        LayoutEntry entry;
        entry.name = r.str();
        entry.offset = r.u64();
        entry.length = r.u64();
        std::uint8_t rank = r.u8();
        for (std::uint8_t k = 0; k < rank; ++k) entry.shape.push_back(r.u64());
        if (entry.offset != expected_offset) r.fail("layout offsets not contiguous");
        expected_offset += entry.length;
        layout.push_back(std::move(entry));
    }
    return layout;
}

inline void write_tensor(Writer& w, const QuantizedTensor& q) {
    w.u64(q.s);
    w.f64(q.offset);
    w.f64(q.d);
    write_layout(w, q.original_layout);
    BitWriter bits(w);
    for (std::int8_t sign : q.signs) bits.put(sign < 0 ? 1 : 0, 1);
    unsigned b = bits_per_level(q.s);
    for (std::uint64_t level : q.levels) bits.put(level, b);
    bits.pad_to_byte();
}

inline QuantizedTensor read_tensor(Reader& r) {
    QuantizedTensor q;
    q.s = r.u64();
    if (q.s == 0) r.fail("level count s must be >= 1");
    q.offset = r.f64();
    q.d = r.f64();
    if (!(q.d >= 0.0)) r.fail("scale d must be non-negative");
    q.original_layout = read_layout(r);
    std::size_t n = 0;
    for (const auto& entry : q.original_layout) n += entry.length;

    BitReader bits(r);
    q.signs.resize(n);
    for (std::size_t i = 0; i < n; ++i) q.signs[i] = bits.get(1) ? -1 : 1;
    unsigned b = bits_per_level(q.s);
    q.levels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        q.levels[i] = bits.get(b);
        if (q.levels[i] > q.s) r.fail("level index exceeds s");
    }
    bits.align();
    return q;
}

inline void write_raw_params(Writer& w, const ParameterVector& params) {
    write_layout(w, params.layout);
    for (double v : params.values) w.f32(static_cast<float>(v));
}

inline ParameterVector read_raw_params(Reader& r) {
    ParameterVector params;
    params.layout = read_layout(r);
    std::size_t n = 0;
    for (const auto& entry : params.layout) n += entry.length;
    params.values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) params.values.push_back(static_cast<double>(r.f32()));
    return params;
}

inline void write_header(Writer& w, MessageKind kind, std::uint8_t stage, std::uint32_t round) {
    w.u8(kWireMagic);
    w.u8(kWireVersion);
    w.u8(static_cast<std::uint8_t>(kind));
    w.u8(stage);
    w.u32(round);
}

inline void read_header(Reader& r, MessageKind expected, std::uint8_t& stage, std::uint32_t& round) {
    if (r.u8() != kWireMagic) r.fail("bad magic");
    if (r.u8() != kWireVersion) r.fail("unsupported version");
    auto kind = r.u8();
    if (kind != static_cast<std::uint8_t>(expected)) r.fail("unexpected message kind");
    stage = r.u8();
    if (stage != 1 && stage != 2) r.fail("stage must be 1 or 2");
    round = r.u32();
}

}  // namespace wire

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

// Per-round client upload: quantized diffs of the retained blocks.
struct BlockUpdateMessage {
    std::uint32_t round = 0;
    std::uint32_t client_id = 0;
    std::uint8_t stage = 1;
    std::vector<std::pair<std::string, std::vector<QuantizedTensor>>> entries;
};

// Server broadcast: the global model quantized layer by layer.
struct GlobalModelMessage {
    std::uint32_t round = 0;
    std::uint8_t stage = 1;
    std::vector<QuantizedTensor> tensors;
};

// Uncompressed counterparts used by the FedAvg baseline (32-bit floats).
struct RawUpdateMessage {
    std::uint32_t round = 0;
    std::uint32_t client_id = 0;
    std::uint8_t stage = 1;
    ParameterVector params;
};

struct RawGlobalMessage {
    std::uint32_t round = 0;
    std::uint8_t stage = 1;
    ParameterVector params;
};

inline std::vector<std::uint8_t> encode(const BlockUpdateMessage& msg) {
    wire::Writer w;
    wire::write_header(w, MessageKind::block_update, msg.stage, msg.round);
    w.u32(msg.client_id);
    w.u32(static_cast<std::uint32_t>(msg.entries.size()));
    for (const auto& [name, tensors] : msg.entries) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(tensors.size()));
        for (const auto& t : tensors) wire::write_tensor(w, t);
    }
    return w.take();
}

inline BlockUpdateMessage decode_block_update(std::span<const std::uint8_t> bytes) {
    wire::Reader r(bytes);
    BlockUpdateMessage msg;
    wire::read_header(r, MessageKind::block_update, msg.stage, msg.round);
    msg.client_id = r.u32();
    std::uint32_t n_entries = r.u32();
    for (std::uint32_t i = 0; i < n_entries; ++i) {
        std::string name = r.str();
        std::uint32_t n_tensors = r.u32();
        std::vector<QuantizedTensor> tensors;
        tensors.reserve(n_tensors);
        for (std::uint32_t t = 0; t < n_tensors; ++t) tensors.push_back(wire::read_tensor(r));
        msg.entries.push_back({std::move(name), std::move(tensors)});
    }
    if (!r.done()) r.fail("trailing bytes");
    return msg;
}

inline std::vector<std::uint8_t> encode(const GlobalModelMessage& msg) {
    wire::Writer w;
    wire::write_header(w, MessageKind::global_model, msg.stage, msg.round);
    w.u32(static_cast<std::uint32_t>(msg.tensors.size()));
    for (const auto& t : msg.tensors) wire::write_tensor(w, t);
    return w.take();
}

inline GlobalModelMessage decode_global_model(std::span<const std::uint8_t> bytes) {
    wire::Reader r(bytes);
    GlobalModelMessage msg;
    wire::read_header(r, MessageKind::global_model, msg.stage, msg.round);
    std::uint32_t n_tensors = r.u32();
    msg.tensors.reserve(n_tensors);
    for (std::uint32_t t = 0; t < n_tensors; ++t) msg.tensors.push_back(wire::read_tensor(r));
    if (!r.done()) r.fail("trailing bytes");
    return msg;
}

inline std::vector<std::uint8_t> encode(const RawUpdateMessage& msg) {
    wire::Writer w;
    wire::write_header(w, MessageKind::raw_update, msg.stage, msg.round);
    w.u32(msg.client_id);
    wire::write_raw_params(w, msg.params);
    return w.take();
}

inline RawUpdateMessage decode_raw_update(std::span<const std::uint8_t> bytes) {
    wire::Reader r(bytes);
    RawUpdateMessage msg;
    wire::read_header(r, MessageKind::raw_update, msg.stage, msg.round);
    msg.client_id = r.u32();
    msg.params = wire::read_raw_params(r);
    if (!r.done()) r.fail("trailing bytes");
    return msg;
}

inline std::vector<std::uint8_t> encode(const RawGlobalMessage& msg) {
    wire::Writer w;
    wire::write_header(w, MessageKind::raw_global, msg.stage, msg.round);
    wire::write_raw_params(w, msg.params);
    return w.take();
}

inline RawGlobalMessage decode_raw_global(std::span<const std::uint8_t> bytes) {
    wire::Reader r(bytes);
    RawGlobalMessage msg;
    wire::read_header(r, MessageKind::raw_global, msg.stage, msg.round);
    msg.params = wire::read_raw_params(r);
    if (!r.done()) r.fail("trailing bytes");
    return msg;
}

// Human-readable dump for debugging.
inline std::string to_debug_text(const BlockUpdateMessage& msg) {
    std::ostringstream os;
    os << "BlockUpdate round=" << msg.round << " client=" << msg.client_id
       << " stage=" << static_cast<int>(msg.stage) << "\n";
    for (const auto& [name, tensors] : msg.entries) {
        os << "  block " << name << " (" << tensors.size() << " tensors)\n";
        for (const auto& t : tensors)
            os << "    n=" << t.size() << " s=" << t.s << " d=" << t.d << " offset=" << t.offset
               << " bits/level=" << bits_per_level(t.s) << "\n";
    }
    return os.str();
}

inline std::string to_debug_text(const GlobalModelMessage& msg) {
    std::ostringstream os;
    os << "GlobalModel round=" << msg.round << " stage=" << static_cast<int>(msg.stage) << "\n";
    for (const auto& t : msg.tensors) {
        os << "  " << (t.original_layout.empty() ? "?" : t.original_layout.front().name)
           << " n=" << t.size() << " s=" << t.s << " d=" << t.d << " offset=" << t.offset << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Model reconstruction and aggregation
// ---------------------------------------------------------------------------

// Applies a client's block-diff update on top of the previous global model:
// named blocks get the dequantized diff added, every other parameter is
// copied through untouched.
inline Model reconstruct(const Model& global_prev, const BlockUpdateMessage& update) {
    auto ranges = block_ranges(global_prev.spec);
    Model out = global_prev;
    for (const auto& [name, tensors] : update.entries) {
        const BlockRange* range = nullptr;
        for (const auto& r : ranges)
            if (r.name == name) {
                range = &r;
                break;
            }
        if (!range) throw std::invalid_argument("unknown block '" + name + "'");

        ParameterVector block_diff = nnadq_dequantize(tensors);
        ParameterVector block = slice_entries(global_prev.params, range->first_entry, range->entry_count);
        if (!block_diff.same_layout(block))
            throw std::invalid_argument("update for block '" + name + "' does not match its layout");

        std::size_t begin = global_prev.params.layout[range->first_entry].offset;
        for (std::size_t i = 0; i < block_diff.values.size(); ++i)
            out.params.values[begin + i] += block_diff.values[i];
    }
    return out;
}

// Sample-count-weighted FedAvg mean. Models are consumed in the order given;
// the caller fixes the order for deterministic floating-point reduction.
inline Model aggregate(const std::vector<Model>& models, const std::vector<std::size_t>& counts) {
    if (models.empty()) throw std::invalid_argument("no models to aggregate");
    if (counts.size() != models.size())
        throw std::invalid_argument("one sample count per model required");
    std::uint64_t total = 0;
    for (std::size_t c : counts) {
        if (c == 0) throw std::invalid_argument("sample counts must be positive");
        total += c;
    }
    for (const auto& m : models)
        if (!(m.spec == models.front().spec) || !m.params.same_layout(models.front().params))
            throw std::invalid_argument("models have mismatched specs");

    Model out = models.front();
    out.params.values.assign(out.params.values.size(), 0.0);
    for (std::size_t i = 0; i < models.size(); ++i) {
        double w = static_cast<double>(counts[i]) / static_cast<double>(total);
        const auto& vals = models[i].params.values;
        for (std::size_t j = 0; j < vals.size(); ++j) out.params.values[j] += w * vals[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Transmission accounting
// ---------------------------------------------------------------------------

enum class Direction { uplink, downlink };

struct RoundTraffic {
    std::uint32_t round = 0;
    std::uint64_t uplink_bytes = 0;
    std::uint64_t downlink_bytes = 0;
};

// Byte totals per direction with a per-round breakdown. One coordinator
// records in round order; totals are monotone by construction.
class TransmissionLedger {
public:
    void record(std::uint32_t round, Direction dir, std::uint64_t bytes) {
        if (rounds_.empty() || rounds_.back().round != round) rounds_.push_back({round, 0, 0});
        if (dir == Direction::uplink) {
            rounds_.back().uplink_bytes += bytes;
            up_ += bytes;
        } else {
            rounds_.back().downlink_bytes += bytes;
            down_ += bytes;
        }
    }

    std::uint64_t cumulative_uplink_bytes() const { return up_; }
    std::uint64_t cumulative_downlink_bytes() const { return down_; }
    std::uint64_t total_bytes() const { return up_ + down_; }
    const std::vector<RoundTraffic>& per_round() const { return rounds_; }

private:
    std::vector<RoundTraffic> rounds_;
    std::uint64_t up_ = 0;
    std::uint64_t down_ = 0;
};

}  // namespace fedobd
