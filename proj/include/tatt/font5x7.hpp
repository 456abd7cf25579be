#pragma once

#include <array>
#include <string_view>

namespace tatt::font {

inline constexpr std::size_t kGlyphW = 5, kGlyphH = 7;

// Rows top to bottom; '#' is ink. Index order matches the alphabet:
// '0'..'9' then 'a'..'z' (letters drawn as capitals).
inline constexpr std::array<std::array<std::string_view, 7>, 36> kGlyphs{{
    {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},  // 0
    {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},  // 1
    {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},  // 2
    {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."},  // 3
    {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},  // 4
    {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},  // 5
    {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},  // 6
    {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."},  // 7
    {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},  // 8
    {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."},  // 9
    {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"},  // a
    {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."},  // b
    {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."},  // c
    {"###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."},  // d
    {"#####", "#....", "#....", "####.", "#....", "#....", "#####"},  // e
    {"#####", "#....", "#....", "####.", "#....", "#....", "#...."},  // f
    {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"},  // g
    {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"},  // h
    {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."},  // i
    {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."},  // j
    {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"},  // k
    {"#....", "#....", "#....", "#....", "#....", "#....", "#####"},  // l
    {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"},  // m
    {"#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"},  // n
    {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."},  // o
    {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."},  // p
    {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"},  // q
    {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"},  // r
    {".####", "#....", "#....", ".###.", "....#", "....#", "####."},  // s
    {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."},  // t
    {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."},  // u
    {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."},  // v
    {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."},  // w
    {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"},  // x
    {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."},  // y
    {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"},  // z
}};

inline bool ink(std::size_t glyph, std::size_t row, std::size_t col) { return kGlyphs[glyph][row][col] == '#'; }

}  // namespace tatt::font
