#include "cvr/store.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace cvr {

namespace {

constexpr char kStoreMagic[4] = {'C', 'V', 'R', 'E'};
constexpr std::uint32_t kStoreVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& os, float x) {
    std::uint32_t v;
    std::memcpy(&v, &x, 4);
    put_u32(os, v);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

float get_f32(std::istream& is) {
    const std::uint32_t v = get_u32(is);
    float x;
    std::memcpy(&x, &v, 4);
    return x;
}

using json = nlohmann::json;

json parse_line(const std::string& path, std::size_t line_no, const std::string& line) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::BadInput,
                    path + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
}

std::uint64_t id_field(const json& j, const char* key, const std::string& path,
                       std::size_t line_no) {
    if (!j.contains(key))
        throw Error(ErrorKind::BadInput,
                    path + ":" + std::to_string(line_no) + ": missing \"" + key + "\"");
    const auto& v = j.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        try {
            std::size_t used = 0;
            const std::uint64_t id = std::stoull(s, &used);
            if (used == s.size()) return id;
        } catch (...) {
        }
    }
    throw Error(ErrorKind::BadInput, path + ":" + std::to_string(line_no) + ": field \"" +
                                         key + "\" is not an unsigned id");
}

std::string text_field(const json& j, const char* key, const std::string& path,
                       std::size_t line_no) {
    if (!j.contains(key) || !j.at(key).is_string())
        throw Error(ErrorKind::BadInput, path + ":" + std::to_string(line_no) +
                                             ": missing string field \"" + key + "\"");
    std::string s = j.at(key).get<std::string>();
    if (!is_valid_utf8(s))
        throw Error(ErrorKind::BadInput,
                    path + ":" + std::to_string(line_no) + ": field \"" + key +
                        "\" is not valid UTF-8");
    return s;
}

template <typename Fn>
void for_each_line(const std::string& path, Fn&& fn) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::BadInput, "cannot open " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (!is_valid_utf8(line))
            throw Error(ErrorKind::BadInput,
                        path + ":" + std::to_string(line_no) + ": not valid UTF-8");
        fn(line_no, line);
    }
}

} // namespace

EmbeddingStoreFile read_store(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::BadInput, "cannot open store: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kStoreMagic, 4) != 0)
        throw Error(ErrorKind::BadInput, path + ": bad store magic");
    EmbeddingStoreFile store;
    store.version = get_u32(is);
    if (store.version != kStoreVersion)
        throw Error(ErrorKind::BadInput,
                    path + ": unsupported store version " + std::to_string(store.version));
    store.dim = get_u32(is);
    const std::uint64_t count = get_u64(is);
    std::uint8_t kind = 0;
    is.read(reinterpret_cast<char*>(&kind), 1);
    if (!is || store.dim == 0)
        throw Error(ErrorKind::BadInput, path + ": malformed store header");
    if (kind > 2) throw Error(ErrorKind::BadInput, path + ": unknown database kind tag");
    store.kind = static_cast<StoreKind>(kind);

    store.records.resize(count);
    for (auto& rec : store.records) {
        rec.id = get_u64(is);
        rec.values.resize(store.dim);
        for (auto& v : rec.values) v = get_f32(is);
        if (!is) throw Error(ErrorKind::BadInput, path + ": truncated store body");
    }
    // must be exactly consumed
    is.peek();
    if (!is.eof()) throw Error(ErrorKind::BadInput, path + ": trailing bytes after records");
    return store;
}

void write_store(const std::string& path, const EmbeddingStoreFile& store) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::BadInput, "cannot open store for writing: " + path);
    os.write(kStoreMagic, 4);
    put_u32(os, store.version);
    put_u32(os, store.dim);
    put_u64(os, store.records.size());
    const auto kind = static_cast<std::uint8_t>(store.kind);
    os.write(reinterpret_cast<const char*>(&kind), 1);
    for (const auto& rec : store.records) {
        if (rec.values.size() != store.dim)
            throw Error(ErrorKind::ShapeError, "store record dimension mismatch");
        put_u64(os, rec.id);
        for (float v : rec.values) put_f32(os, v);
    }
    if (!os) throw Error(ErrorKind::BadInput, "store write failed: " + path);
}

VisualProvider provider_from_store(const EmbeddingStoreFile& store) {
    VisualProvider provider;
    std::size_t i = 0;
    while (i < store.records.size()) {
        const std::uint64_t id = store.records[i].id;
        if (provider.sequences.count(id))
            throw Error(ErrorKind::DuplicateId,
                        "store: id " + std::to_string(id) + " appears in separate runs");
        std::size_t j = i;
        while (j < store.records.size() && store.records[j].id == id) ++j;
        Mat seq(j - i, store.dim);
        for (std::size_t r = i; r < j; ++r)
            for (std::size_t c = 0; c < store.dim; ++c)
                seq.at(r - i, c) = static_cast<double>(store.records[r].values[c]);
        provider.sequences.emplace(id, std::move(seq));
        i = j;
    }
    return provider;
}

EmbeddingStoreFile store_from_provider(const VisualProvider& provider, StoreKind kind) {
    EmbeddingStoreFile store;
    store.kind = kind;
    for (const auto& [id, seq] : provider.sequences) {
        store.dim = static_cast<std::uint32_t>(seq.cols);
        for (std::size_t r = 0; r < seq.rows; ++r) {
            StoreRecord rec;
            rec.id = id;
            rec.values.resize(seq.cols);
            for (std::size_t c = 0; c < seq.cols; ++c)
                rec.values[c] = static_cast<float>(seq.at(r, c));
            store.records.push_back(std::move(rec));
        }
    }
    return store;
}

std::map<std::uint64_t, Embedding> table_from_store(const EmbeddingStoreFile& store) {
    std::map<std::uint64_t, Embedding> table;
    for (const auto& rec : store.records) {
        if (table.count(rec.id))
            throw Error(ErrorKind::DuplicateId,
                        "store: duplicate id " + std::to_string(rec.id));
        Embedding e(rec.values.begin(), rec.values.end());
        table.emplace(rec.id, std::move(e));
    }
    return table;
}

EmbeddingStoreFile store_from_table(const std::map<std::uint64_t, Embedding>& table,
                                    StoreKind kind) {
    EmbeddingStoreFile store;
    store.kind = kind;
    for (const auto& [id, emb] : table) {
        store.dim = static_cast<std::uint32_t>(emb.size());
        StoreRecord rec;
        rec.id = id;
        rec.values.resize(emb.size());
        for (std::size_t c = 0; c < emb.size(); ++c) rec.values[c] = static_cast<float>(emb[c]);
        store.records.push_back(std::move(rec));
    }
    return store;
}

std::vector<TripletRecord> read_manifest(const std::string& path) {
    std::vector<TripletRecord> out;
    for_each_line(path, [&](std::size_t line_no, const std::string& line) {
        const json j = parse_line(path, line_no, line);
        TripletRecord rec;
        rec.query_id = id_field(j, "query_id", path, line_no);
        rec.description = text_field(j, "description", path, line_no);
        rec.change_text = text_field(j, "change_text", path, line_no);
        rec.target_id = id_field(j, "target_id", path, line_no);
        if (j.contains("subset")) {
            if (!j.at("subset").is_array())
                throw Error(ErrorKind::BadInput,
                            path + ":" + std::to_string(line_no) + ": \"subset\" must be an array");
            for (const auto& v : j.at("subset")) {
                if (!v.is_number_unsigned())
                    throw Error(ErrorKind::BadInput, path + ":" + std::to_string(line_no) +
                                                         ": subset entries must be unsigned ids");
                rec.subset.push_back(v.get<std::uint64_t>());
            }
        }
        out.push_back(std::move(rec));
    });
    return out;
}

void write_manifest(const std::string& path, const std::vector<TripletRecord>& triplets) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(ErrorKind::BadInput, "cannot open manifest for writing: " + path);
    for (const auto& t : triplets) {
        json j;
        j["query_id"] = t.query_id;
        j["description"] = t.description;
        j["change_text"] = t.change_text;
        j["target_id"] = t.target_id;
        if (!t.subset.empty()) j["subset"] = t.subset;
        os << j.dump() << '\n';
    }
}

std::map<std::uint64_t, std::string> read_descriptions_file(const std::string& path) {
    std::map<std::uint64_t, std::string> out;
    for_each_line(path, [&](std::size_t line_no, const std::string& line) {
        const json j = parse_line(path, line_no, line);
        if (j.contains("summary")) return; // filter-output trailer
        if (j.contains("status") &&
            j.at("status").get<std::string>() != description_status_name(DescriptionStatus::Kept))
            return;
        const std::uint64_t id = id_field(j, "id", path, line_no);
        const std::string text = text_field(j, "text", path, line_no);
        if (out.count(id))
            throw Error(ErrorKind::BadInput,
                        path + ":" + std::to_string(line_no) + ": duplicate description id " +
                            std::to_string(id));
        out.emplace(id, text);
    });
    return out;
}

void write_descriptions_file(const std::string& path,
                             const std::map<std::uint64_t, std::string>& descriptions) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(ErrorKind::BadInput, "cannot open descriptions for writing: " + path);
    for (const auto& [id, text] : descriptions) {
        json j;
        j["id"] = std::to_string(id);
        j["text"] = text;
        os << j.dump() << '\n';
    }
}

void write_filtered_descriptions(const std::string& path,
                                 const std::vector<DescriptionRecord>& records,
                                 double threshold) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(ErrorKind::BadInput, "cannot open filter output: " + path);
    std::size_t kept = 0, hallucinated = 0, empty = 0;
    for (const auto& rec : records) {
        json j;
        j["id"] = std::to_string(rec.id);
        j["text"] = rec.status == DescriptionStatus::DiscardedEmpty ? rec.raw_text
                                                                    : rec.cleaned_text;
        if (rec.has_similarity) j["similarity"] = rec.similarity;
        j["status"] = description_status_name(rec.status);
        os << j.dump() << '\n';
        switch (rec.status) {
            case DescriptionStatus::Kept: ++kept; break;
            case DescriptionStatus::DiscardedHallucination: ++hallucinated; break;
            case DescriptionStatus::DiscardedEmpty: ++empty; break;
        }
    }
    json summary;
    summary["summary"] = true;
    summary["threshold"] = threshold;
    summary["kept"] = kept;
    summary["discarded_hallucination"] = hallucinated;
    summary["discarded_empty"] = empty;
    os << summary.dump() << '\n';
}

std::vector<CalibrationPair> read_captions_file(const std::string& path) {
    std::vector<CalibrationPair> out;
    for_each_line(path, [&](std::size_t line_no, const std::string& line) {
        const json j = parse_line(path, line_no, line);
        CalibrationPair pair;
        pair.id = id_field(j, "id", path, line_no);
        pair.caption = text_field(j, "text", path, line_no);
        out.push_back(std::move(pair));
    });
    return out;
}

bool is_valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len;
        std::uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xe0) == 0xc0) {
            len = 2;
            cp = c & 0x1f;
        } else if ((c & 0xf0) == 0xe0) {
            len = 3;
            cp = c & 0x0f;
        } else if ((c & 0xf8) == 0xf0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xc0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        // overlong encodings, surrogates and out-of-range points are invalid
        if (len == 2 && cp < 0x80) return false;
        if (len == 3 && cp < 0x800) return false;
        if (len == 4 && cp < 0x10000) return false;
        if (cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return false;
        i += len;
    }
    return true;
}

} // namespace cvr
