#include "evlg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "evlg/errors.hpp"

namespace evlg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'V', 'L', 'G'};

class Writer {
   public:
    template <class T>
    void put(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(T));
    }
    void put_string(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
    void put_raw(const void* data, std::size_t size) {
        const auto* p = static_cast<const char*>(data);
        bytes.insert(bytes.end(), p, p + size);
    }
    std::vector<char> bytes;
};

class Reader {
   public:
    Reader(const char* data, std::size_t size, std::string what) : data_(data), size_(size), what_(std::move(what)) {}

    template <class T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        const char* p = take(n);
        return std::string(p, n);
    }
    const char* take(std::size_t n) {
        if (n > size_ - pos_) throw CheckpointError(what_ + ": truncated");
        const char* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    bool done() const { return pos_ == size_; }

   private:
    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::vector<char> encode_payload(const CheckpointSection& s) {
    Writer w;
    if (s.is_text) {
        w.put_raw(s.text.data(), s.text.size());
        return w.bytes;
    }
    w.put(static_cast<std::uint32_t>(s.tensors.size()));
    for (const auto& t : s.tensors) {
        w.put_string(t.name);
        w.put(static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) w.put(static_cast<std::uint64_t>(d));
        w.put_raw(t.data.data(), t.data.size() * sizeof(double));
    }
    return w.bytes;
}

CheckpointSection decode_payload(const std::string& name, bool is_text, const char* data, std::size_t size) {
    CheckpointSection s{name, {}, is_text, {}};
    if (is_text) {
        s.text.assign(data, size);
        return s;
    }
    Reader r(data, size, "section '" + name + "'");
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        SavedTensor t;
        t.name = r.get_string();
        const auto rank = r.get<std::uint32_t>();
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
            n *= t.shape.back();
        }
        t.data.resize(n);
        std::memcpy(t.data.data(), r.take(n * sizeof(double)), n * sizeof(double));
        s.tensors.push_back(std::move(t));
    }
    if (!r.done()) throw CheckpointError("section '" + name + "': trailing bytes");
    return s;
}

}  // namespace

std::uint64_t fnv1a64(const void* bytes, std::size_t size) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return true;
    return false;
}

const CheckpointSection& Checkpoint::section(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return s;
    throw CheckpointError("checkpoint has no '" + name + "' section");
}

void Checkpoint::set(CheckpointSection section) {
    for (auto& s : sections)
        if (s.name == section.name) {
            s = std::move(section);
            return;
        }
    sections.push_back(std::move(section));
}

CheckpointSection tensor_section(const std::string& name, const ParameterList& params) {
    CheckpointSection s{name, {}, false, {}};
    for (const auto& [n, t] : params) s.tensors.push_back({n, t.shape(), {t.data().begin(), t.data().end()}});
    return s;
}

CheckpointSection text_section(const std::string& name, const std::string& text) { return {name, {}, true, text}; }

void restore_section(const CheckpointSection& section, const ParameterList& params) {
    if (section.is_text) throw CheckpointError("section '" + section.name + "' holds text, not tensors");
    if (section.tensors.size() != params.size()) {
        throw CheckpointError("section '" + section.name + "' has " + std::to_string(section.tensors.size()) +
                              " tensors, expected " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& saved = section.tensors[i];
        const auto& [name, target] = params[i];
        if (saved.name != name || saved.shape != target.shape()) {
            throw CheckpointError("section '" + section.name + "': saved " + saved.name + " " +
                                  shape_to_string(saved.shape) + " does not match " + name + " " +
                                  shape_to_string(target.shape()));
        }
        Tensor dst = target;
        std::copy(saved.data.begin(), saved.data.end(), dst.mutable_data().begin());
    }
}

ParameterList section_tensors(const CheckpointSection& section) {
    ParameterList out;
    for (const auto& t : section.tensors) out.push_back({t.name, Tensor::from_data(t.shape, t.data)});
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    Writer w;
    w.put_raw(kMagic, 4);
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint32_t>(checkpoint.sections.size()));
    for (const auto& s : checkpoint.sections) {
        const auto payload = encode_payload(s);
        w.put_string(s.name);
        w.put(static_cast<std::uint8_t>(s.is_text ? 1 : 0));
        w.put(static_cast<std::uint64_t>(payload.size()));
        w.put_raw(payload.data(), payload.size());
        w.put(fnv1a64(payload.data(), payload.size()));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw CheckpointError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string what = "checkpoint " + path.string();
    Reader r(bytes.data(), bytes.size(), what);
    if (std::memcmp(r.take(4), kMagic, 4) != 0) throw CheckpointError(what + ": not an EVLG checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError(what + ": format version " + std::to_string(version) + " is not supported (this build reads " +
                              std::to_string(kCheckpointVersion) + "); re-create it with a matching build");
    }
    Checkpoint cp;
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.get_string();
        const auto kind = r.get<std::uint8_t>();
        if (kind > 1) throw CheckpointError(what + ": section '" + name + "' has unknown kind");
        const auto size = r.get<std::uint64_t>();
        const char* payload = r.take(static_cast<std::size_t>(size));
        const auto checksum = r.get<std::uint64_t>();
        if (checksum != fnv1a64(payload, static_cast<std::size_t>(size))) {
            throw CheckpointError(what + ": checksum mismatch in section '" + name + "'");
        }
        cp.sections.push_back(decode_payload(name, kind == 1, payload, static_cast<std::size_t>(size)));
    }
    if (!r.done()) throw CheckpointError(what + ": trailing bytes after the last section");
    return cp;
}

}  // namespace evlg
