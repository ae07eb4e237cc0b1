#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

#include <boost/tokenizer.hpp>
#include "json.hpp"

#include "gtt/datapipe.hpp"
#include "gtt/errors.hpp"

namespace gtt {

const char* role_name(ChannelRole role)
{
    return role == ChannelRole::target ? "target" : "covariate";
}

void RawSeries::validate() const
{
    if (channels == 0) {
        throw DataError("series '" + id + "' has no channels");
    }
    if (values.size() != length * channels) {
        throw DataError("series '" + id + "': " + std::to_string(values.size()) + " values for " +
                        std::to_string(length) + " rows x " + std::to_string(channels) + " channels");
    }
    if (roles.size() != channels || names.size() != channels) {
        throw DataError("series '" + id + "': roles/names do not match the channel count");
    }
    if (!timestamps.empty()) {
        if (timestamps.size() != length) {
            throw DataError("series '" + id + "': " + std::to_string(timestamps.size()) + " timestamps for " +
                            std::to_string(length) + " rows");
        }
        for (std::size_t t = 1; t < length; ++t) {
            if (timestamps[t] <= timestamps[t - 1]) {
                throw DataError("series '" + id + "': timestamps not strictly increasing at row " +
                                std::to_string(t));
            }
        }
    }
}

std::size_t RawSeries::target_count() const
{
    return static_cast<std::size_t>(std::count(roles.begin(), roles.end(), ChannelRole::target));
}

RawSeries RawSeries::targets_first() const
{
    std::vector<std::size_t> order;
    for (ChannelRole want : {ChannelRole::target, ChannelRole::covariate}) {
        for (std::size_t c = 0; c < channels; ++c) {
            if (roles[c] == want) {
                order.push_back(c);
            }
        }
    }
    RawSeries out = *this;
    for (std::size_t t = 0; t < length; ++t) {
        for (std::size_t j = 0; j < channels; ++j) {
            out.values[t * channels + j] = values[t * channels + order[j]];
        }
    }
    for (std::size_t j = 0; j < channels; ++j) {
        out.roles[j] = roles[order[j]];
        out.names[j] = names[order[j]];
    }
    return out;
}

// ------------------------------------------------------------------ time

namespace {

bool take_int(std::string_view& s, std::size_t digits, int& out)
{
    if (s.size() < digits) {
        return false;
    }
    for (std::size_t i = 0; i < digits; ++i) {
        if (s[i] < '0' || s[i] > '9') {
            return false;
        }
    }
    std::from_chars(s.data(), s.data() + digits, out);
    s.remove_prefix(digits);
    return true;
}

bool take_char(std::string_view& s, char c)
{
    if (s.empty() || s.front() != c) {
        return false;
    }
    s.remove_prefix(1);
    return true;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

} // namespace

std::optional<std::int64_t> parse_iso8601(std::string_view text)
{
    using namespace std::chrono;
    std::string_view s = trim(text);
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
    if (!take_int(s, 4, y) || !take_char(s, '-') || !take_int(s, 2, mo) || !take_char(s, '-') || !take_int(s, 2, d)) {
        return std::nullopt;
    }
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) {
        return std::nullopt;
    }
    int offset = 0;
    if (!s.empty()) {
        if (!(take_char(s, 'T') || take_char(s, ' ')) || !take_int(s, 2, h) || !take_char(s, ':') ||
            !take_int(s, 2, mi)) {
            return std::nullopt;
        }
        if (take_char(s, ':')) {
            if (!take_int(s, 2, sec)) {
                return std::nullopt;
            }
            if (take_char(s, '.')) {
                while (!s.empty() && s.front() >= '0' && s.front() <= '9') s.remove_prefix(1);
            }
        }
        if (h > 23 || mi > 59 || sec > 60) {
            return std::nullopt;
        }
        if (take_char(s, 'Z')) {
        } else if (!s.empty() && (s.front() == '+' || s.front() == '-')) {
            const int sign = s.front() == '-' ? -1 : 1;
            s.remove_prefix(1);
            int oh = 0, om = 0;
            if (!take_int(s, 2, oh)) {
                return std::nullopt;
            }
            take_char(s, ':');
            if (!s.empty() && !take_int(s, 2, om)) {
                return std::nullopt;
            }
            offset = sign * (oh * 3600 + om * 60);
        }
    }
    if (!s.empty()) {
        return std::nullopt;
    }
    const std::int64_t days = sys_days{ymd}.time_since_epoch().count();
    return days * 86400 + h * 3600 + mi * 60 + sec - offset;
}

std::vector<double> encode_time_features(std::span<const std::int64_t> unix_seconds)
{
    using namespace std::chrono;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    std::vector<double> out(unix_seconds.size() * kTimeFeatures);
    for (std::size_t i = 0; i < unix_seconds.size(); ++i) {
        const std::int64_t ts = unix_seconds[i];
        std::int64_t days = ts / 86400;
        std::int64_t sod = ts % 86400;
        if (sod < 0) {
            sod += 86400;
            --days;
        }
        const sys_days day_point{std::chrono::days{days}};
        const unsigned dow = (weekday{day_point}.c_encoding() + 6) % 7; // Monday = 0
        const unsigned month_index = static_cast<unsigned>(year_month_day{day_point}.month()) - 1;
        const double angles[3] = {two_pi * static_cast<double>(sod) / 86400.0, two_pi * dow / 7.0,
                                  two_pi * month_index / 12.0};
        for (int k = 0; k < 3; ++k) {
            out[i * kTimeFeatures + 2 * k] = std::sin(angles[k]);
            out[i * kTimeFeatures + 2 * k + 1] = std::cos(angles[k]);
        }
    }
    return out;
}

// ------------------------------------------------------------------ CSV

ColumnRoles ColumnRoles::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open column-role file " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed column-role file " + path.string() + ": " + e.what());
    }
    static const std::set<std::string> known{"timestamp", "targets", "covariates", "ignore"};
    ColumnRoles roles;
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) {
            throw ConfigError("unknown key '" + key + "' in column-role file " + path.string());
        }
    }
    try {
        if (j.contains("timestamp")) {
            roles.timestamp_column = j["timestamp"].is_null() ? std::string() : j["timestamp"].get<std::string>();
        }
        roles.targets = j.value("targets", std::vector<std::string>{});
        roles.covariates = j.value("covariates", std::vector<std::string>{});
        roles.ignore = j.value("ignore", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("column-role file " + path.string() + ": " + e.what());
    }
    if (!roles.targets.empty()) {
        roles.fallback = ChannelRole::covariate;
    }
    return roles;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line)
{
    using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
    std::vector<std::string> fields;
    Tokenizer tok(line, boost::escaped_list_separator<char>('\\', ',', '"'));
    for (const auto& f : tok) {
        fields.emplace_back(trim(f));
    }
    return fields;
}

double parse_number(const std::string& field, const std::filesystem::path& path, std::size_t line, std::size_t col)
{
    if (field.empty() || field == "NA" || field == "NaN" || field == "nan" || field == "null") {
        return std::numeric_limits<double>::quiet_NaN();
    }
    double v = 0.0;
    const char* begin = field.data();
    if (*begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw DataError(path.string() + ":" + std::to_string(line) + ": column " + std::to_string(col + 1) +
                        " is not numeric: '" + field + "'");
    }
    return v;
}

} // namespace

RawSeries read_csv(const std::filesystem::path& path, const ColumnRoles& roles)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (trim(line).empty()) {
            continue;
        }
        try {
            rows.push_back(split_csv_line(line));
        } catch (const boost::escaped_list_error& e) {
            throw DataError(path.string() + ":" + std::to_string(rows.size() + 1) + ": " + e.what());
        }
    }
    if (rows.empty()) {
        throw DataError(path.string() + ": missing header row");
    }
    const std::vector<std::string> header = rows.front();
    auto column_of = [&](const std::string& name) -> std::size_t {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw ConfigError(path.string() + ": no column named '" + name + "'");
        }
        return static_cast<std::size_t>(it - header.begin());
    };

    std::optional<std::size_t> ts_col;
    if (roles.timestamp_column) {
        if (!roles.timestamp_column->empty()) {
            ts_col = column_of(*roles.timestamp_column);
        }
    } else if (rows.size() > 1 && !rows[1].empty() && parse_iso8601(rows[1][0])) {
        ts_col = 0;
    }
    std::set<std::size_t> skipped;
    for (const auto& name : roles.ignore) skipped.insert(column_of(name));
    std::set<std::size_t> target_cols, covariate_cols;
    for (const auto& name : roles.targets) target_cols.insert(column_of(name));
    for (const auto& name : roles.covariates) covariate_cols.insert(column_of(name));

    RawSeries s;
    s.id = path.stem().string();
    std::vector<std::size_t> value_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if ((ts_col && c == *ts_col) || skipped.count(c)) {
            continue;
        }
        value_cols.push_back(c);
        s.names.push_back(header[c]);
        s.roles.push_back(target_cols.count(c)      ? ChannelRole::target
                          : covariate_cols.count(c) ? ChannelRole::covariate
                                                    : roles.fallback);
    }
    s.channels = value_cols.size();
    if (s.channels == 0) {
        throw DataError(path.string() + ": no value columns");
    }
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& fields = rows[r];
        if (fields.size() != header.size()) {
            throw DataError(path.string() + ":" + std::to_string(r + 1) + ": expected " +
                            std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        }
        if (ts_col) {
            const auto ts = parse_iso8601(fields[*ts_col]);
            if (!ts) {
                throw DataError(path.string() + ":" + std::to_string(r + 1) + ": bad timestamp '" +
                                fields[*ts_col] + "'");
            }
            s.timestamps.push_back(*ts);
        }
        for (std::size_t c : value_cols) {
            s.values.push_back(parse_number(fields[c], path, r + 1, c));
        }
    }
    s.length = rows.size() - 1;
    s.validate();
    return s;
}

} // namespace gtt
