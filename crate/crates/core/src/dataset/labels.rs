use std::fmt;

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident = $id:literal => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant = $id),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub const COUNT: usize = Self::ALL.len();

            pub fn id(self) -> usize {
                self as usize
            }

            pub fn from_id(id: usize) -> Option<Self> {
                Self::ALL.get(id).copied()
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

label_enum! {
    /// Dialect class, numbered as in the source corpus.
    Accent {
        Scottish = 0 => "Scottish",
        British = 1 => "British",
        German = 2 => "German",
        American = 3 => "American",
        India = 4 => "India",
        Mandarin = 5 => "Mandarin",
    }
}

label_enum! {
    AgeGroup {
        Under20 = 0 => "below 20",
        Twenties = 1 => "20-29",
        Thirties = 2 => "30-39",
        Forties = 3 => "40-49",
        FiftyPlus = 4 => "50 and above",
    }
}

label_enum! {
    Gender {
        Male = 0 => "male",
        Female = 1 => "female",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_and_bijective() {
        assert_eq!(Accent::COUNT, 6);
        assert_eq!(AgeGroup::COUNT, 5);
        assert_eq!(Gender::COUNT, 2);
        for (i, a) in Accent::ALL.iter().enumerate() {
            assert_eq!(a.id(), i);
            assert_eq!(Accent::from_id(i), Some(*a));
        }
        assert_eq!(Accent::from_id(6), None);
        assert_eq!(Gender::Male.id(), 0);
        assert_eq!(Gender::Female.id(), 1);
        assert_eq!(AgeGroup::FiftyPlus.id(), 4);
    }
}
