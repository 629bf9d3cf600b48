#include "ahan/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ahan {

namespace {
constexpr const char* kHeader = "image_id,identity_id,twin_identity_id,split,path";

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}
}  // namespace

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + std::string(text) + "' (expected train or test)");
}

TwinManifest::TwinManifest(std::vector<ManifestEntry> entries, std::filesystem::path root)
    : entries_(std::move(entries)), root_(std::move(root)) {}

void TwinManifest::validate() const {
    std::set<std::string> ids;
    std::map<std::string, std::optional<std::string>> twin;
    for (const auto& e : entries_) {
        if (!ids.insert(e.image_id).second) throw std::invalid_argument("duplicate image id '" + e.image_id + "'");
        if (e.twin_identity && *e.twin_identity == e.identity) {
            throw std::invalid_argument("identity '" + e.identity + "' is listed as its own twin");
        }
        auto [it, fresh] = twin.emplace(e.identity, e.twin_identity);
        if (!fresh && it->second != e.twin_identity) {
            throw std::invalid_argument("identity '" + e.identity + "' has inconsistent twin entries");
        }
    }
    for (const auto& [id, t] : twin) {
        if (!t) continue;
        auto other = twin.find(*t);
        if (other != twin.end() && other->second != id) {
            throw std::invalid_argument("twin relation is not symmetric for '" + id + "' and '" + *t + "'");
        }
    }
}

TwinManifest TwinManifest::filter(Split split) const {
    std::vector<ManifestEntry> kept;
    for (const auto& e : entries_)
        if (e.split == split) kept.push_back(e);
    return TwinManifest(std::move(kept), root_);
}

std::vector<std::string> TwinManifest::identities() const {
    std::set<std::string> ids;
    for (const auto& e : entries_) ids.insert(e.identity);
    return {ids.begin(), ids.end()};
}

std::map<std::string, std::vector<std::size_t>> TwinManifest::images_by_identity() const {
    std::map<std::string, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < entries_.size(); ++i) out[entries_[i].identity].push_back(i);
    return out;
}

std::optional<std::string> TwinManifest::twin_of(std::string_view identity) const {
    for (const auto& e : entries_)
        if (e.identity == identity) return e.twin_identity;
    return std::nullopt;
}

std::vector<std::pair<std::string, std::string>> TwinManifest::twin_families() const {
    const auto by_id = images_by_identity();
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [id, idx] : by_id) {
        const auto& t = entries_[idx.front()].twin_identity;
        if (t && id < *t && by_id.count(*t)) out.emplace_back(id, *t);
    }
    return out;
}

std::filesystem::path TwinManifest::resolve(const ManifestEntry& e) const {
    std::filesystem::path p(e.path);
    return p.is_absolute() ? p : root_ / p;
}

TwinManifest TwinManifest::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kHeader) {
        throw std::runtime_error("manifest " + path.string() + ": expected header '" + kHeader + "'");
    }
    std::vector<ManifestEntry> entries;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 5) {
            throw std::runtime_error("manifest " + path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
        }
        ManifestEntry e{f[0], f[1], f[2].empty() ? std::nullopt : std::optional<std::string>(f[2]), parse_split(f[3]),
                        f[4]};
        entries.push_back(std::move(e));
    }
    TwinManifest m(std::move(entries), path.parent_path());
    m.validate();
    return m;
}

void TwinManifest::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out << kHeader << '\n';
    for (const auto& e : entries_) {
        out << e.image_id << ',' << e.identity << ',' << e.twin_identity.value_or("") << ',' << to_string(e.split)
            << ',' << e.path << '\n';
    }
}

}  // namespace ahan
