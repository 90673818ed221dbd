//! Reference datasets shared by the integration tests and the acceptance
//! harness. Expected values were produced once with SciPy
//! (`scipy.stats.ttest_ind(equal_var=False)` and `scipy.stats.shapiro`) and
//! are frozen here.

#![allow(dead_code)]

pub struct WelchCase {
    pub a: &'static [f64],
    pub b: &'static [f64],
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

pub const WELCH: &[WelchCase] = &[
    WelchCase {
        a: &[7.4247, 10.925, 10.3182, 5.6104, 8.2412, 12.8998, 7.0988, 10.827, 10.3294, 8.4355, 6.1399, 10.1307],
        b: &[
            16.0135, 10.3033, 8.4648, 4.7916, 9.2967, 8.6937, 11.4583, 16.0212, 10.0244, 14.7737, 11.4107, 5.523, 12.127,
            12.1742, 8.3485,
        ],
        t: -1.485429911213924,
        df: 24.23879396880472,
        p: 0.1503210080926928,
    },
    WelchCase {
        a: &[100.27, 107.448, 99.0, 98.211, 99.491],
        b: &[116.061, 141.249, 124.788, 103.682, 112.624, 109.924, 66.604, 112.577],
        t: -1.306116345656302,
        df: 7.679665558024147,
        p: 0.2292730996525415,
    },
    WelchCase {
        a: &[
            0.32256, 0.64088, 0.43128, 0.75727, 0.5172, 0.56171, 0.36151, 0.45017, 0.68237, 0.44682, 0.51243, 0.66906,
            0.52167, 0.50028, 0.47853, 0.39388, 0.51067, 0.51143, 0.77506, 0.57494, 0.49201, 0.64007, 0.59767, 0.38182,
            0.51585, 0.38315, 0.51549, 0.44959, 0.63013, 0.73284,
        ],
        b: &[
            0.34142, 0.47747, 0.47212, 0.35919, 0.47759, 0.62126, 0.64317, 0.48918, 0.6213, 0.39359, 0.41076, 0.19183,
            0.47548, 0.43002, 0.55516, 0.44994, 0.36048, 0.30094, 0.4349, 0.5095, 0.61971, 0.39758, 0.54271, 0.37126,
            0.66548,
        ],
        t: 2.124121121035064,
        df: 51.55093550104212,
        p: 0.03847712764917325,
    },
    WelchCase {
        a: &[0.6369, 3.4113, 1.5642, 4.6478, 0.0643, 5.0028, 0.579, 2.6999, 0.5081, 0.2302],
        b: &[3.8379, 13.4272, 4.3573, 0.1129, 2.023, 6.0666, 2.9977, 1.2617, 5.5465, 0.1016],
        t: -1.483270652115235,
        df: 12.91047014839348,
        p: 0.1619996028398930,
    },
    WelchCase {
        a: &[1.0, 2.0, 3.0, 4.0, 5.0],
        b: &[2.5, 3.5, 4.5, 6.0, 7.5, 9.0],
        t: -2.029994857352875,
        df: 8.544160132067685,
        p: 0.07460807914358498,
    },
];

pub struct ShapiroCase {
    pub x: &'static [f64],
    pub w: f64,
    pub p: f64,
}

pub const SHAPIRO: &[ShapiroCase] = &[
    ShapiroCase {
        x: &[
            5.5371, 4.9789, 6.2643, 6.7687, 7.4805, 6.154, 7.1531, 2.4458, 4.7476, 5.4009, 7.7878, 3.214, 4.5883, 2.9228,
            3.4746, 2.5916, 6.9093, 6.3204, 3.9977, 4.4831,
        ],
        w: 0.953903789035109,
        p: 0.430248752830607,
    },
    ShapiroCase {
        x: &[
            0.9643, 0.5662, 0.3133, 0.551, 0.1931, 0.7448, 0.4611, 0.268, 0.9269, 0.3717, 0.1003, 0.2221, 0.4448, 0.0987,
            0.9022, 0.6099, 0.2155, 0.9236, 0.7723, 0.8124, 0.3086, 0.0687, 0.9435, 0.0768, 0.2588, 0.0853, 0.7433, 0.1812,
            0.1066, 0.6367, 0.672, 0.1957, 0.9798, 0.1606, 0.4343, 0.2782, 0.2549, 0.3284, 0.6754, 0.4817, 0.0204, 0.1268,
            0.6281, 0.2814, 0.0471, 0.2266, 0.3149, 0.1195, 0.642, 0.3654,
        ],
        w: 0.920521723688518,
        p: 0.002462672969584,
    },
    ShapiroCase {
        x: &[1.0, 2.0, 4.0],
        w: 0.964285714285714,
        p: 0.636886845028969,
    },
    ShapiroCase {
        x: &[3.1, 1.2, 5.5, 2.2, 8.9, 4.4],
        w: 0.944126552081905,
        p: 0.692592144710416,
    },
];
