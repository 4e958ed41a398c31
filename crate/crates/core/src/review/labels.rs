use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! label_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];
            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($name::$var),)+
                    other => Err(format!("{other:?} is not a {} value", stringify!($name).to_lowercase())),
                }
            }
        }
    };
}

label_enum!(
    /// Which labeling pass a label belongs to.
    Dimension {
        Groundedness => "groundedness",
        Breadth => "breadth",
        Gain => "gain",
        Source => "source",
    }
);

label_enum!(Groundedness { Grounded => "grounded", Ungrounded => "ungrounded" });
label_enum!(Breadth { Specific => "specific", OverlyBroad => "overly_broad" });
label_enum!(Gain { Little => "little", Minor => "minor", Substantial => "substantial" });
label_enum!(Source { Content => "content", ConversationalDynamics => "conversational_dynamics" });

impl Dimension {
    /// Gain and source judge merged codes; the other two judge raw codes.
    pub fn targets_merged(self) -> bool {
        matches!(self, Dimension::Gain | Dimension::Source)
    }

    pub fn check_value(self, value: &str) -> Result<(), String> {
        match self {
            Dimension::Groundedness => value.parse::<Groundedness>().map(drop),
            Dimension::Breadth => value.parse::<Breadth>().map(drop),
            Dimension::Gain => value.parse::<Gain>().map(drop),
            Dimension::Source => value.parse::<Source>().map(drop),
        }
    }
}

/// One reviewer's label on a raw code (groundedness, breadth) or a merged
/// code (gain, source).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityLabel {
    #[serde(alias = "merged_code_id", alias = "code_id")]
    pub target_id: String,
    pub dimension: Dimension,
    pub value: String,
    pub reviewer: String,
    #[serde(default)]
    pub memo: String,
    #[serde(default)]
    pub is_consensus: bool,
}
