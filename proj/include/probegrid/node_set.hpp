#ifndef PROBEGRID_NODE_SET_HPP
#define PROBEGRID_NODE_SET_HPP

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <ostream>
#include <vector>

namespace probegrid {

/// Dense bitset over node indices 0..capacity-1.
///
/// One machine word covers a 64-node feeder, so intersections and equality
/// tests on level sets are a handful of word operations.
class NodeSet {
public:
    NodeSet() = default;
    explicit NodeSet(int capacity) : capacity_(capacity), words_((capacity + 63) / 64, 0) {}
    NodeSet(int capacity, std::initializer_list<int> members) : NodeSet(capacity) {
        for (int m : members) insert(m);
    }

    static NodeSet full(int capacity) {
        NodeSet s(capacity);
        for (int i = 0; i < capacity; ++i) s.insert(i);
        return s;
    }

    int capacity() const noexcept { return capacity_; }

    void insert(int m) { words_[m >> 6] |= std::uint64_t{1} << (m & 63); }
    void erase(int m) { words_[m >> 6] &= ~(std::uint64_t{1} << (m & 63)); }
    bool contains(int m) const {
        return m >= 0 && m < capacity_ && ((words_[m >> 6] >> (m & 63)) & 1U) != 0;
    }

    int size() const {
        int n = 0;
        for (auto w : words_) n += std::popcount(w);
        return n;
    }
    bool empty() const {
        for (auto w : words_)
            if (w != 0) return false;
        return true;
    }

    /// Smallest member, or -1 when empty.
    int first() const {
        for (std::size_t i = 0; i < words_.size(); ++i)
            if (words_[i] != 0) return static_cast<int>(i * 64) + std::countr_zero(words_[i]);
        return -1;
    }

    std::vector<int> members() const {
        std::vector<int> out;
        for (std::size_t i = 0; i < words_.size(); ++i) {
            auto w = words_[i];
            while (w != 0) {
                out.push_back(static_cast<int>(i * 64) + std::countr_zero(w));
                w &= w - 1;
            }
        }
        return out;
    }

    NodeSet& operator&=(const NodeSet& o) {
        for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
        return *this;
    }
    NodeSet& operator|=(const NodeSet& o) {
        for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
        return *this;
    }
    NodeSet& operator-=(const NodeSet& o) {
        for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= ~o.words_[i];
        return *this;
    }
    friend NodeSet operator&(NodeSet a, const NodeSet& b) { return a &= b; }
    friend NodeSet operator|(NodeSet a, const NodeSet& b) { return a |= b; }
    friend NodeSet operator-(NodeSet a, const NodeSet& b) { return a -= b; }

    bool is_subset_of(const NodeSet& o) const {
        for (std::size_t i = 0; i < words_.size(); ++i)
            if ((words_[i] & ~o.words_[i]) != 0) return false;
        return true;
    }

    friend bool operator==(const NodeSet& a, const NodeSet& b) {
        return a.capacity_ == b.capacity_ && a.words_ == b.words_;
    }

    friend std::ostream& operator<<(std::ostream& os, const NodeSet& s) {
        os << '{';
        bool sep = false;
        for (int m : s.members()) {
            if (sep) os << ',';
            os << m;
            sep = true;
        }
        return os << '}';
    }

private:
    int capacity_ = 0;
    std::vector<std::uint64_t> words_;
};

}  // namespace probegrid

#endif  // PROBEGRID_NODE_SET_HPP
